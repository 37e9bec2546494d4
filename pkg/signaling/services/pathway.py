"""
Intracellular pathway: receptor activity, adaptation and tumbling response

Offsets are measured from the methylation equilibrium, r = m - M, and in
the blow-up coordinate y = r / epsilon. The tumbling rate used here is
increasing in y: cells whose methylation lags above the equilibrium are
more active and tumble more often.
"""
import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional, Tuple, Union

import numpy as np
from django.core.exceptions import ValidationError

from chemotaxis_lab.exceptions import UnsupportedOrderError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# exp() arguments are clamped to this magnitude
EXP_CLAMP = 700.0

# Below this |r| the adaptation ratio G switches to its Taylor series
SERIES_THRESHOLD = 1e-4

MIN_QUADRATURE_ORDER = 2
MAX_QUADRATURE_ORDER = 256


@dataclass(frozen=True)
class PathwayParams:
    """
    Pathway constants.

    N receptor cluster size, alpha methylation gain, a0 preferred activity,
    z0 baseline tumbling rate (1/s), tau motor time scale (s), H motor Hill
    coefficient, sigma stiffness of the kernel in y, epsilon adaptation to
    run time-scale ratio.
    """
    N: int = 6
    alpha: float = 1.7
    a0: float = 0.5
    z0: float = 0.14
    tau: float = 0.8
    H: float = 10.0
    sigma: float = 1.0
    epsilon: float = 0.1
    noise_enabled: bool = False
    quadrature_order: int = 64

    def __post_init__(self):
        errors = []
        if int(self.N) != self.N or self.N < 1:
            errors.append(f"Cluster size N ({self.N}) must be a positive integer.")
        if self.alpha <= 0:
            errors.append(f"Gain alpha ({self.alpha}) must be positive.")
        if not 0 < self.a0 < 1:
            errors.append(f"Preferred activity a0 ({self.a0}) must lie in (0, 1).")
        elif not math.isclose(self.a0, 0.5, abs_tol=1e-12):
            # f(0) = 1 - 1/(2 a0) must vanish for G = -f(r)/r to stay bounded
            errors.append(
                f"Preferred activity a0 is restricted to 1/2 (got {self.a0}): "
                f"adaptation only returns to equilibrium when f(0) = 1 - 1/(2 a0) vanishes."
            )
        if self.z0 <= 0 or self.tau <= 0:
            errors.append(f"Rates need z0 > 0 and tau > 0 (got z0={self.z0}, tau={self.tau}).")
        if self.H <= 0:
            errors.append(f"Hill coefficient H ({self.H}) must be positive.")
        if self.sigma <= 0:
            errors.append(f"Kernel stiffness sigma ({self.sigma}) must be positive.")
        if not 0 < self.epsilon <= 1:
            errors.append(f"Scale separation epsilon ({self.epsilon}) must lie in (0, 1].")
        if not MIN_QUADRATURE_ORDER <= self.quadrature_order <= MAX_QUADRATURE_ORDER:
            errors.append(
                f"Quadrature order ({self.quadrature_order}) must lie in "
                f"[{MIN_QUADRATURE_ORDER}, {MAX_QUADRATURE_ORDER}]."
            )
        if errors:
            raise ValidationError(errors)

    @property
    def gain(self) -> float:
        """N alpha, the slope scale of the activity logistic"""
        return self.N * self.alpha

    @property
    def G0(self) -> float:
        """G(0) = N alpha / (4 a0)"""
        return self.gain / (4.0 * self.a0)

    @property
    def lambda_minus(self) -> float:
        return self.z0

    @property
    def lambda_plus(self) -> float:
        return self.z0 + self.a0 ** (-self.H) / self.tau

    @property
    def k_R(self) -> float:
        """Adaptation rate 1/epsilon in units of the run time scale"""
        return 1.0 / self.epsilon

    def replace(self, **changes) -> 'PathwayParams':
        return replace(self, **changes)


def _out(value: np.ndarray) -> ArrayLike:
    return value if value.ndim else float(value)


def _logistic(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -EXP_CLAMP, EXP_CLAMP)))


def activity(m: ArrayLike, M: ArrayLike, params: PathwayParams) -> ArrayLike:
    """Receptor cluster activity a = (1 + exp(-N alpha (m - M)))^-1"""
    r = np.asarray(m, dtype=float) - np.asarray(M, dtype=float)
    return _out(_logistic(params.gain * r))


def adaptation_f(r: ArrayLike, params: PathwayParams) -> ArrayLike:
    """Methylation drift f(r) = 1 - a(r)/a0"""
    r = np.asarray(r, dtype=float)
    return _out(1.0 - _logistic(params.gain * r) / params.a0)


def G(r: ArrayLike, params: PathwayParams) -> ArrayLike:
    """
    Adaptation ratio G(r) = -f(r)/r, positive and bounded.

    Near r = 0 the series k/(4 a0) - k^3 r^2 / (48 a0) with k = N alpha is
    used instead of the quotient.
    """
    r = np.asarray(r, dtype=float)
    k = params.gain
    small = np.abs(r) < SERIES_THRESHOLD
    safe_r = np.where(small, 1.0, r)
    direct = -np.asarray(adaptation_f(safe_r, params)) / safe_r
    series = k / (4.0 * params.a0) - k ** 3 * r * r / (48.0 * params.a0)
    return _out(np.where(small, series, direct))


def g_bounds(params: PathwayParams, y_halfwidth: float, samples: int = 2001) -> Tuple[float, float]:
    """Range [g-, g+] of G(epsilon y) over |y| <= y_halfwidth"""
    y = np.linspace(-y_halfwidth, y_halfwidth, samples)
    values = np.asarray(G(params.epsilon * y, params))
    return float(values.min()), float(values.max())


def tumbling_Lambda(y: ArrayLike, params: PathwayParams, v: ArrayLike = None, v_prime: ArrayLike = None) -> ArrayLike:
    """
    Tumbling rate Lambda(y) = z0 + tau^-1 (a(sigma y) / a0)^H.

    Isotropic: the velocity arguments are accepted so that
    velocity-dependent kernels can share the signature, and are ignored.
    """
    z = np.clip(params.gain * params.sigma * np.asarray(y, dtype=float), -EXP_CLAMP, EXP_CLAMP)
    log_activity = -np.logaddexp(0.0, -z)
    motor = np.exp(params.H * (log_activity - math.log(params.a0))) / params.tau
    return _out(params.z0 + motor)


def methylation_rate_from_activity(a: ArrayLike, params: PathwayParams) -> ArrayLike:
    """Activity-form adaptation rate (1/epsilon)(1 - a/a0)"""
    return _out(np.asarray((1.0 - np.asarray(a, dtype=float) / params.a0) / params.epsilon))


def tumbling_rate_from_activity(a: ArrayLike, params: PathwayParams) -> ArrayLike:
    """Activity-form tumbling rate z0 + tau^-1 (a/a0)^H"""
    return _out(params.z0 + (np.asarray(a, dtype=float) / params.a0) ** params.H / params.tau)


def epsilon_from_timescales(adaptation_time: float, run_time: float) -> float:
    """Scale separation epsilon as adaptation time over run time"""
    if adaptation_time <= 0 or run_time <= 0:
        raise ValidationError("Time scales must be positive.")
    return adaptation_time / run_time


def limit_kernel_deterministic(u: ArrayLike, params: PathwayParams) -> ArrayLike:
    """Path-wise tumbling kernel T(u) = Lambda(-u / G0), decreasing in u"""
    u = np.asarray(u, dtype=float)
    return tumbling_Lambda(-u / params.G0, params)


@lru_cache(maxsize=16)
def hermite_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes and weights for weight exp(-s^2)"""
    if not MIN_QUADRATURE_ORDER <= order <= MAX_QUADRATURE_ORDER:
        raise UnsupportedOrderError(
            f"Gauss-Hermite order {order} outside [{MIN_QUADRATURE_ORDER}, {MAX_QUADRATURE_ORDER}]"
        )
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def limit_kernel_noise(
    u: ArrayLike,
    params: PathwayParams,
    quadrature_order: Optional[int] = None,
    variance_scale: float = 1.0,
    rate_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> ArrayLike:
    """
    Noise-averaged kernel: the expectation of Lambda over a Gaussian in y
    centred at -u/G0 with variance variance_scale / G0.

    rate_fn replaces Lambda; used to check the rule on polynomials.
    """
    order = params.quadrature_order if quadrature_order is None else int(quadrature_order)
    nodes, weights = hermite_rule(order)
    if variance_scale < 0:
        raise ValidationError(f"Variance scale ({variance_scale}) must be non-negative.")

    u = np.asarray(u, dtype=float)
    spread = math.sqrt(2.0 * variance_scale / params.G0)
    y = (-u / params.G0)[..., None] + spread * nodes
    rate = rate_fn(y) if rate_fn is not None else np.asarray(tumbling_Lambda(y, params))
    return _out(np.asarray(rate) @ weights / math.sqrt(math.pi))


def limit_kernel(u: ArrayLike, params: PathwayParams, mode: str = 'deterministic', **kwargs) -> ArrayLike:
    """Dispatch on the kernel mode ('deterministic' or 'noise')"""
    if mode == 'noise':
        return limit_kernel_noise(u, params, **kwargs)
    if mode == 'deterministic':
        return limit_kernel_deterministic(u, params)
    raise ValidationError(f"Unknown kernel mode '{mode}'.")


def kernel_table(u_values: np.ndarray, params: PathwayParams, quadrature_order: Optional[int] = None) -> dict:
    """Deterministic and noise-averaged kernels side by side"""
    u_values = np.asarray(u_values, dtype=float)
    return {
        'u': u_values,
        'T_deterministic': np.asarray(limit_kernel_deterministic(u_values, params)),
        'T_noise': np.asarray(limit_kernel_noise(u_values, params, quadrature_order=quadrature_order)),
    }
