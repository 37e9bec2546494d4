"""
Finite-volume solver for the limiting kinetic equation

The tumbling rate out of velocity v at (x, t) is T(D_tM(x, v, t)), either
the deterministic kernel or its noise-averaged form. Post-tumble
velocities are drawn from the normalized velocity measure, the same
convention as the full solver and the agents.
"""
import logging
import math
from typing import Callable, Optional

import numpy as np
from django.core.exceptions import ValidationError
from django.db import models
from scipy.linalg import expm

from chemotaxis_lab.exceptions import DegenerateInputError, GridMismatchError, StabilityError
from signaling.services.pathway import PathwayParams, limit_kernel
from signaling.services.signal_field import SignalField
from .full_solver import transport_x_rate
from .grid import FullGrid, snapshot_times

logger = logging.getLogger(__name__)


class KernelMode(models.TextChoices):
    DETERMINISTIC = 'deterministic', 'Deterministic kernel'
    NOISE = 'noise', 'Noise-averaged kernel'


class LimitKineticState:
    """Velocity-resolved density pbar over (x-cell, velocity) at time t"""

    def __init__(self, grid: FullGrid, pbar: np.ndarray, t: float, total_mass_initial: float,
                 kernel_mode: str = KernelMode.DETERMINISTIC, steps: int = 0):
        self.grid = grid
        self.pbar = pbar
        self.t = float(t)
        self.total_mass_initial = float(total_mass_initial)
        self.kernel_mode = kernel_mode
        self.steps = steps

    def mass(self) -> float:
        return float((self.pbar @ self.grid.weights).sum() * self.grid.dx)

    def mass_drift(self) -> float:
        return abs(self.mass() - self.total_mass_initial) / self.total_mass_initial

    def __repr__(self):
        return f"LimitKineticState(t={self.t:.4f}, kernel={self.kernel_mode}, steps={self.steps})"


def exchange_two_velocity(pbar: np.ndarray, T: np.ndarray, weights: np.ndarray, dt: float) -> np.ndarray:
    """
    Exact tumbling exchange for two velocities.

    The weighted sum s = w1 p1 + w2 p2 is conserved and p1 relaxes at rate
    (w2 T1 + w1 T2)/W toward T2 s / (w2 T1 + w1 T2).
    """
    w1, w2 = weights
    W = w1 + w2
    p1, p2 = pbar[:, 0], pbar[:, 1]
    T1, T2 = T[:, 0], T[:, 1]
    s = w1 * p1 + w2 * p2
    denominator = w2 * T1 + w1 * T2
    equilibrium = T2 * s / denominator
    new_p1 = equilibrium + (p1 - equilibrium) * np.exp(-denominator / W * dt)
    new_p2 = (s - w1 * new_p1) / w2
    return np.stack([new_p1, new_p2], axis=1)


def exchange_general(pbar: np.ndarray, T: np.ndarray, weights: np.ndarray, dt: float) -> np.ndarray:
    """Exact tumbling exchange through a matrix exponential per x-cell"""
    nv = weights.size
    share = weights / weights.sum()
    generator = -np.eye(nv)[None] * T[:, None, :] + np.ones((nv, 1))[None] * (share * T)[:, None, :]
    propagator = expm(generator * dt)
    return np.einsum('ijk,ik->ij', propagator, pbar)


class LimitKineticSolver:
    """
    Time stepper for the limit model: x-transport (dt/2), tumbling (dt) with
    T at the midpoint, x-transport (dt/2).

    Args:
        grid: grid whose x and velocity parts are used
        signal: prescribed signal field
        pathway: pathway constants
        kernel_mode: 'deterministic' or 'noise'
        quadrature_order: Gauss-Hermite order for the noise kernel
        variance_scale: scales the noise variance 1/G(0)
    """

    def __init__(self, grid: FullGrid, signal: SignalField, pathway: PathwayParams,
                 kernel_mode: str = KernelMode.DETERMINISTIC, quadrature_order: Optional[int] = None,
                 variance_scale: float = 1.0):
        if not math.isclose(grid.domain_length, signal.domain_length, rel_tol=1e-12):
            raise GridMismatchError(
                f"Grid length {grid.domain_length} differs from signal domain {signal.domain_length}"
            )
        if kernel_mode not in KernelMode.values:
            raise ValidationError(f"Unknown kernel mode '{kernel_mode}'. Valid modes: {', '.join(KernelMode.values)}.")
        self.grid = grid
        self.signal = signal
        self.pathway = pathway
        self.kernel_mode = kernel_mode
        self.quadrature_order = quadrature_order
        self.variance_scale = variance_scale

    def kernel_field(self, t: float) -> np.ndarray:
        """T(D_tM(x, v, t)) at the x-cell centres, shape (nx, nv)"""
        D = np.asarray(
            self.signal.pathwise_derivative(self.grid.x_centers[:, None], self.grid.velocities[None, :], t)
        )
        if self.kernel_mode == KernelMode.NOISE:
            return np.asarray(limit_kernel(
                D, self.pathway, mode='noise',
                quadrature_order=self.quadrature_order, variance_scale=self.variance_scale,
            ))
        return np.asarray(limit_kernel(D, self.pathway))

    def initialize(self, x_profile=None, v_profile=None, mass: float = 1.0) -> LimitKineticState:
        return initialize(self.grid, self.signal, x_profile, v_profile, mass, self.kernel_mode)

    def default_dt(self) -> float:
        return self.grid.cfl_limit()

    def _transport_x(self, pbar: np.ndarray, h: float) -> np.ndarray:
        rate = transport_x_rate(pbar[..., None], self.grid.velocities, self.grid.dx)[..., 0]
        return pbar + h * rate

    def _tumble(self, pbar: np.ndarray, T: np.ndarray, dt: float) -> np.ndarray:
        if self.grid.nv == 2:
            return exchange_two_velocity(pbar, T, self.grid.weights, dt)
        return exchange_general(pbar, T, self.grid.weights, dt)

    def step(self, state: LimitKineticState, dt: float) -> LimitKineticState:
        limit = self.grid.cfl_limit()
        if dt <= 0:
            raise ValidationError(f"Time step must be positive (dt={dt}).")
        if dt > limit * (1.0 + 1e-12):
            logger.error(f"x-transport CFL violated: dt={dt} > {limit}")
            raise StabilityError('x-transport', f"dt={dt} exceeds the upwind limit 0.9*dx/max|v| = {limit:.6g}")

        h = 0.5 * dt
        pbar = self._transport_x(state.pbar, h)
        pbar = self._tumble(pbar, self.kernel_field(state.t + h), dt)
        pbar = self._transport_x(pbar, h)
        return LimitKineticState(
            self.grid, pbar, state.t + dt, state.total_mass_initial, state.kernel_mode, state.steps + 1
        )

    def run(self, state: LimitKineticState, t_end: float, dt: Optional[float] = None,
            snapshot_every: Optional[float] = None,
            on_snapshot: Optional[Callable[[LimitKineticState], None]] = None) -> LimitKineticState:
        dt = dt or self.default_dt()
        logger.info(f"Limit kinetic run: {self.grid}, kernel={self.kernel_mode}, dt={dt:.4g}, t_end={t_end}")
        for target in snapshot_times(state.t, t_end, snapshot_every):
            while state.t < target - 1e-9 * max(1.0, target):
                state = self.step(state, min(dt, target - state.t))
            logger.debug(f"Snapshot at t={state.t:.4f}, mass drift {state.mass_drift():.2e}")
            if on_snapshot:
                on_snapshot(state)
        return state


def initialize(grid: FullGrid, signal: SignalField, x_profile=None, v_profile=None, mass: float = 1.0,
               kernel_mode: str = KernelMode.DETERMINISTIC) -> LimitKineticState:
    """Uniform (or given) separable initial density normalized to mass"""
    if not math.isclose(grid.domain_length, signal.domain_length, rel_tol=1e-12):
        raise GridMismatchError(f"Grid length {grid.domain_length} differs from signal domain {signal.domain_length}")
    x_part = np.ones(grid.nx) if x_profile is None else np.asarray(x_profile, dtype=float)
    v_part = np.ones(grid.nv) if v_profile is None else np.asarray(v_profile, dtype=float)
    if x_part.shape != (grid.nx,) or v_part.shape != (grid.nv,):
        raise ValidationError("Initial x/v profiles must have one entry per x-cell / velocity.")
    pbar = x_part[:, None] * v_part[None, :]
    if np.any(pbar < 0) or not np.all(np.isfinite(pbar)):
        raise ValidationError("Initial profile must be finite and nonnegative.")
    raw_mass = float((pbar @ grid.weights).sum() * grid.dx)
    if raw_mass <= 0:
        raise DegenerateInputError("Initial profile carries no mass")
    return LimitKineticState(grid, pbar * (mass / raw_mass), 0.0, mass, kernel_mode)


def from_marginal(grid: FullGrid, qbar: np.ndarray, t: float = 0.0,
                  kernel_mode: str = KernelMode.DETERMINISTIC) -> LimitKineticState:
    """Limit state seeded with the y-marginal of a full state"""
    pbar = np.array(qbar, dtype=float)
    mass = float((pbar @ grid.weights).sum() * grid.dx)
    return LimitKineticState(grid, pbar, t, mass, kernel_mode)


def step(state: LimitKineticState, signal: SignalField, pathway: PathwayParams, dt: float, **options) -> LimitKineticState:
    """One split step; options are passed to LimitKineticSolver"""
    options.setdefault('kernel_mode', state.kernel_mode)
    return LimitKineticSolver(state.grid, signal, pathway, **options).step(state, dt)


def kernel_field(state: LimitKineticState, signal: SignalField, pathway: PathwayParams, **options) -> np.ndarray:
    """Tumbling kernel over (x-cell, velocity) at the state's time"""
    options.setdefault('kernel_mode', state.kernel_mode)
    return LimitKineticSolver(state.grid, signal, pathway, **options).kernel_field(state.t)
