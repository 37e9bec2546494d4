"""
Prescribed extracellular signal and log-sensing methylation equilibrium

Lengths are in um, times in s, concentrations in uM; methylation is
dimensionless. Every function accepts scalars or numpy arrays and
broadcasts like numpy does.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Tuple, Union

import numpy as np
from django.core.exceptions import ValidationError
from django.db import models

from chemotaxis_lab.exceptions import DomainError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class SignalKind(models.TextChoices):
    TRAVELING_WAVE = 'traveling-wave', 'Traveling wave'
    STATIC = 'static', 'Static profile'
    UNIFORM_RAMP = 'uniform-ramp', 'Uniform methylation ramp'
    TABULATED = 'tabulated', 'Tabulated profile'


@dataclass(frozen=True)
class LogSensingParams:
    """Receptor log-sensing constants (m0, alpha, K_I, K_A in uM)"""
    m0: float = 1.0
    alpha: float = 1.7
    K_I: float = 18.2
    K_A: float = 3000.0

    def __post_init__(self):
        errors = []
        if not 0 < self.K_I < self.K_A:
            errors.append(f"Dissociation constants must satisfy 0 < K_I ({self.K_I}) < K_A ({self.K_A}).")
        if self.alpha <= 0:
            errors.append(f"Gain alpha ({self.alpha}) must be positive.")
        if self.m0 <= 0:
            errors.append(f"Base methylation m0 ({self.m0}) must be positive.")
        if errors:
            raise ValidationError(errors)


@dataclass(frozen=True)
class SignalSpec:
    """
    Shape of the ligand field S(x, t).

    The traveling wave is S0 + SA sin(2 pi (x - u t) / ell) on a periodic
    domain whose length equals the wavelength. The static kind freezes the
    same profile at t = 0. The uniform ramp prescribes M = m0 + c t directly
    on [0, ramp_window]. The tabulated kind interpolates (table_x, table_S)
    and is constant in time.
    """
    kind: str = SignalKind.TRAVELING_WAVE
    S0: float = 500.0
    SA: float = 100.0
    wavelength_ell: float = 800.0
    wave_speed_u: float = 0.4
    domain_length: float = None
    ramp_rate: float = 0.5
    ramp_window: float = 10.0
    table_x: Tuple[float, ...] = field(default=())
    table_S: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.domain_length is None:
            object.__setattr__(self, 'domain_length', float(self.wavelength_ell))
        object.__setattr__(self, 'table_x', tuple(float(v) for v in self.table_x))
        object.__setattr__(self, 'table_S', tuple(float(v) for v in self.table_S))

        errors = []
        if self.kind not in SignalKind.values:
            errors.append(f"Unknown signal kind '{self.kind}'. Valid kinds: {', '.join(SignalKind.values)}.")
        if self.domain_length <= 0:
            errors.append(f"Domain length ({self.domain_length}) must be positive.")
        if self.kind in (SignalKind.TRAVELING_WAVE, SignalKind.STATIC):
            if not self.S0 > self.SA >= 0:
                errors.append(f"Signal must stay positive: S0 ({self.S0}) > SA ({self.SA}) >= 0.")
            if self.wavelength_ell <= 0:
                errors.append(f"Wavelength ({self.wavelength_ell}) must be positive.")
            elif not math.isclose(self.domain_length, self.wavelength_ell, rel_tol=1e-12):
                errors.append(
                    f"Domain length ({self.domain_length}) must equal the wavelength ({self.wavelength_ell})."
                )
        if self.kind == SignalKind.UNIFORM_RAMP and self.ramp_window <= 0:
            errors.append(f"Ramp window ({self.ramp_window}) must be positive.")
        if self.kind == SignalKind.TABULATED:
            x = np.asarray(self.table_x)
            s = np.asarray(self.table_S)
            if x.size < 2 or x.size != s.size:
                errors.append("Tabulated signal needs at least two (x, S) samples of equal length.")
            elif np.any(np.diff(x) <= 0):
                errors.append("Tabulated positions must be strictly increasing.")
            elif np.any(s <= 0):
                errors.append("Tabulated concentrations must be positive.")
            elif x[0] < 0 or x[-1] > self.domain_length:
                errors.append("Tabulated positions must lie inside [0, domain_length].")
        if errors:
            raise ValidationError(errors)

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi / self.wavelength_ell

    @property
    def is_time_dependent(self) -> bool:
        return self.kind in (SignalKind.TRAVELING_WAVE, SignalKind.UNIFORM_RAMP)


def _out(value: np.ndarray) -> ArrayLike:
    return value if value.ndim else float(value)


def wrap(x: ArrayLike, length: float) -> np.ndarray:
    """Map positions into [0, length)"""
    return np.mod(np.asarray(x, dtype=float), length)


def _phase(spec: SignalSpec, x, t) -> np.ndarray:
    u = spec.wave_speed_u if spec.kind == SignalKind.TRAVELING_WAVE else 0.0
    return spec.wavenumber * (np.asarray(x, dtype=float) - u * np.asarray(t, dtype=float))


def _check_time(spec: SignalSpec, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError(f"Signal evaluated at negative time {np.min(t)}")
    if spec.kind == SignalKind.UNIFORM_RAMP and np.any(t > spec.ramp_window):
        raise DomainError(f"Uniform ramp is only defined on [0, {spec.ramp_window}] s (got t={np.max(t)})")
    return t


def _table_lookup(spec: SignalSpec, x) -> np.ndarray:
    xw = wrap(x, spec.domain_length)
    lo, hi = spec.table_x[0], spec.table_x[-1]
    if np.any((xw < lo) | (xw > hi)):
        raise DomainError(f"Position outside tabulated support [{lo}, {hi}]")
    return np.interp(xw, spec.table_x, spec.table_S)


def f0(S: ArrayLike, p: LogSensingParams) -> ArrayLike:
    """Log-sensing free energy ln((1 + S/K_I) / (1 + S/K_A))"""
    S = np.asarray(S, dtype=float)
    if np.any(S <= 0):
        raise DomainError("Log-sensing requires a positive ligand concentration")
    return _out(np.log1p(S / p.K_I) - np.log1p(S / p.K_A))


def f0_prime(S: ArrayLike, p: LogSensingParams) -> ArrayLike:
    """dS f0 = 1/(S + K_I) - 1/(S + K_A)"""
    S = np.asarray(S, dtype=float)
    return _out(1.0 / (S + p.K_I) - 1.0 / (S + p.K_A))


def f0_inverse(value: ArrayLike, p: LogSensingParams) -> ArrayLike:
    """Ligand concentration S with f0(S) = value"""
    e = np.exp(np.asarray(value, dtype=float))
    denominator = 1.0 / p.K_I - e / p.K_A
    if np.any(denominator <= 0) or np.any(e < 1.0):
        raise DomainError("Methylation level not reachable by any positive ligand concentration")
    return _out((e - 1.0) / denominator)


def ligand(spec: SignalSpec, x: ArrayLike, t: ArrayLike, p: LogSensingParams = None) -> ArrayLike:
    """Ligand concentration S(x, t) in uM"""
    t = _check_time(spec, t)
    if spec.kind == SignalKind.TABULATED:
        return _out(_table_lookup(spec, x) + 0.0 * t)
    if spec.kind == SignalKind.UNIFORM_RAMP:
        p = p or LogSensingParams()
        level = p.alpha * spec.ramp_rate * t + 0.0 * np.asarray(x, dtype=float)
        return f0_inverse(level, p)
    return _out(spec.S0 + spec.SA * np.sin(_phase(spec, x, t)))


def methylation_equilibrium(spec: SignalSpec, p: LogSensingParams, x: ArrayLike, t: ArrayLike) -> ArrayLike:
    """Equilibrium methylation M = m0 + f0(S)/alpha"""
    if spec.kind == SignalKind.UNIFORM_RAMP:
        t = _check_time(spec, t)
        return _out(p.m0 + spec.ramp_rate * t + 0.0 * np.asarray(x, dtype=float))
    return _out(p.m0 + np.asarray(f0(ligand(spec, x, t, p), p)) / p.alpha)


def pathwise_derivative(spec: SignalSpec, p: LogSensingParams, x: ArrayLike, v: ArrayLike, t: ArrayLike) -> ArrayLike:
    """
    Path-wise derivative D_t M = dM/dt + v dM/dx along a straight run.

    Analytic through the chain rule except for the tabulated kind, which
    uses centered differences of M.
    """
    v = np.asarray(v, dtype=float)
    if spec.kind == SignalKind.UNIFORM_RAMP:
        _check_time(spec, t)
        return _out(spec.ramp_rate + 0.0 * v * np.asarray(x, dtype=float))
    if spec.kind == SignalKind.TABULATED:
        _check_time(spec, t)
        return _out(v * _tabulated_gradient(spec, p, x))

    S = np.asarray(ligand(spec, x, t, p))
    u = spec.wave_speed_u if spec.kind == SignalKind.TRAVELING_WAVE else 0.0
    dS_dx = spec.SA * spec.wavenumber * np.cos(_phase(spec, x, t))
    return _out((v - u) * dS_dx * np.asarray(f0_prime(S, p)) / p.alpha)


def _tabulated_gradient(spec: SignalSpec, p: LogSensingParams, x) -> np.ndarray:
    xw = wrap(x, spec.domain_length)
    lo, hi = spec.table_x[0], spec.table_x[-1]
    h = 1e-3 * float(np.min(np.diff(spec.table_x)))
    left = np.clip(xw - h, lo, hi)
    right = np.clip(xw + h, lo, hi)
    m_left = p.m0 + np.asarray(f0(_table_lookup(spec, left), p)) / p.alpha
    m_right = p.m0 + np.asarray(f0(_table_lookup(spec, right), p)) / p.alpha
    return (m_right - m_left) / (right - left)


class SignalField:
    """
    Immutable bundle of a signal shape and the log-sensing receptor.

    Stores the methylation bounds m_minus <= M <= m_plus at construction
    and exposes the quantities both solvers and the agents read.
    """

    def __init__(self, spec: SignalSpec, params: LogSensingParams = None):
        self.spec = spec
        self.params = params or LogSensingParams()
        self.derivative_method = 'finite-difference' if spec.kind == SignalKind.TABULATED else 'analytic'
        self.m_minus, self.m_plus = self._methylation_bounds()
        if self.m_minus <= 0:
            raise ValidationError(
                f"Equilibrium methylation must stay positive (lower bound {self.m_minus:.4g})."
            )
        logger.debug(
            f"Signal {spec.kind}: M in [{self.m_minus:.4f}, {self.m_plus:.4f}], "
            f"derivatives {self.derivative_method}"
        )

    def _methylation_bounds(self) -> Tuple[float, float]:
        spec, p = self.spec, self.params
        if spec.kind == SignalKind.UNIFORM_RAMP:
            end = p.m0 + spec.ramp_rate * spec.ramp_window
            return min(p.m0, end), max(p.m0, end)
        if spec.kind == SignalKind.TABULATED:
            levels = p.m0 + np.asarray(f0(np.asarray(spec.table_S), p)) / p.alpha
            return float(np.min(levels)), float(np.max(levels))
        # f0(S) > 0 for every S > 0, so m0 bounds M from below
        return p.m0, p.m0 + float(f0(spec.S0 + spec.SA, p)) / p.alpha

    @property
    def domain_length(self) -> float:
        return self.spec.domain_length

    @property
    def wave_speed(self) -> float:
        return self.spec.wave_speed_u if self.spec.kind == SignalKind.TRAVELING_WAVE else 0.0

    def ligand(self, x, t):
        return ligand(self.spec, x, t, self.params)

    def methylation(self, x, t):
        return methylation_equilibrium(self.spec, self.params, x, t)

    def pathwise_derivative(self, x, v, t):
        return pathwise_derivative(self.spec, self.params, x, v, t)

    def max_pathwise_derivative(self, speeds: Iterable[float], t_end: float = 0.0) -> float:
        """Upper bound of |D_t M| over the domain for the given run speeds"""
        speeds = np.abs(np.asarray(list(speeds), dtype=float))
        spec, p = self.spec, self.params
        if spec.kind == SignalKind.UNIFORM_RAMP:
            return abs(spec.ramp_rate)
        if spec.kind == SignalKind.TABULATED:
            x = np.linspace(spec.table_x[0], spec.table_x[-1], 4 * len(spec.table_x) + 1)
            return float(np.max(np.abs(_tabulated_gradient(spec, p, x))) * np.max(speeds))
        # f0' is decreasing in S, so the trough of the wave maximises it
        slope = float(f0_prime(spec.S0 - spec.SA, p)) / p.alpha
        return float((np.max(speeds) + abs(self.wave_speed)) * spec.SA * spec.wavenumber * slope)
