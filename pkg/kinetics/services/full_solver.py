"""
Finite-volume solver for the kinetic equation with internal state

The unknown is q(x, v, y) in the blow-up coordinate y = (m - M) / epsilon.
One step is a Strang splitting

    x-transport (dt/2) -> y-stage (dt/2) -> tumbling (dt) -> y-stage (dt/2) -> x-transport (dt/2)

with periodic first-order upwind in x, conservative upwind drift in y
(explicit sub-cycling, or backward Euler with the 'implicit' scheme),
implicit Neumann diffusion in y when noise is enabled, and an exact
isotropic velocity exchange for tumbling.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from django.core.exceptions import ValidationError
from scipy.linalg import solve_banded

from chemotaxis_lab.exceptions import DegenerateInputError, GridMismatchError, StabilityError, TruncationError
from chemotaxis_lab.parallel import apply_in_slices
from signaling.services.pathway import G, PathwayParams, tumbling_Lambda
from signaling.services.signal_field import SignalField
from .grid import FullGrid, snapshot_times

logger = logging.getLogger(__name__)

Y_SCHEMES = ('explicit', 'implicit')

# Courant number of the explicit y-drift sub-steps
Y_COURANT = 0.5

# Cells at each end of the y-interval watched for truncation
EDGE_CELLS = 3


@dataclass
class InitialSpec:
    """
    Initial profile.

    Default: uniform in x and v, Gaussian in y with mean y_mean and
    variance 1/G(0). dirac puts all y-mass in the cell containing y_mean;
    table gives q directly as an (nx, nv, ny) array.
    """
    y_mean: float = 0.0
    y_variance: Optional[float] = None
    dirac: bool = False
    x_profile: Optional[Sequence[float]] = None
    v_profile: Optional[Sequence[float]] = None
    table: Optional[np.ndarray] = None
    mass: float = 1.0


class FullKineticState:
    """Density q over (x-cell, velocity, y-cell) at time t"""

    def __init__(self, grid: FullGrid, q: np.ndarray, t: float, epsilon: float,
                 total_mass_initial: float, steps: int = 0):
        self.grid = grid
        self.q = q
        self.t = float(t)
        self.epsilon = float(epsilon)
        self.total_mass_initial = float(total_mass_initial)
        self.steps = steps

    def mass(self) -> float:
        weighted = np.tensordot(self.q, self.grid.weights, axes=([1], [0]))
        return float(weighted.sum() * self.grid.dx * self.grid.dy)

    def mass_drift(self) -> float:
        """Relative deviation from the initial mass"""
        return abs(self.mass() - self.total_mass_initial) / self.total_mass_initial

    def copy(self) -> 'FullKineticState':
        return FullKineticState(self.grid, self.q.copy(), self.t, self.epsilon, self.total_mass_initial, self.steps)

    def __repr__(self):
        return f"FullKineticState(t={self.t:.4f}, epsilon={self.epsilon}, steps={self.steps})"


# Semi-discrete rates. All of them act on the last three axes (x, v, y) and
# accept leading batch axes.

def transport_x_rate(q: np.ndarray, velocities: np.ndarray, dx: float) -> np.ndarray:
    """Periodic first-order upwind for v dq/dx"""
    rate = np.empty_like(q)
    for j, v in enumerate(velocities):
        qj = q[..., :, j, :]
        upstream = np.roll(qj, 1 if v > 0 else -1, axis=-2)
        rate[..., :, j, :] = -abs(v) / dx * (qj - upstream)
    return rate


def drift_faces_flux(q: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Upwind fluxes a*q on the y-faces; no inflow through the two ends"""
    flux = np.empty(np.broadcast_shapes(q.shape[:-1], a.shape[:-1]) + (a.shape[-1],))
    inner = a[..., 1:-1]
    flux[..., 1:-1] = np.where(inner > 0, inner * q[..., :-1], inner * q[..., 1:])
    flux[..., 0] = np.minimum(a[..., 0], 0.0) * q[..., 0]
    flux[..., -1] = np.maximum(a[..., -1], 0.0) * q[..., -1]
    return flux


def drift_y_rate(q: np.ndarray, a: np.ndarray, dy: float) -> np.ndarray:
    flux = drift_faces_flux(q, a)
    return -(flux[..., 1:] - flux[..., :-1]) / dy


def diffusion_y_rate(q: np.ndarray, dy: float, epsilon: float) -> np.ndarray:
    """(1/epsilon) d2q/dy2 with zero-flux ends"""
    padded = np.concatenate([q[..., :1], q, q[..., -1:]], axis=-1)
    return (padded[..., 2:] - 2.0 * q + padded[..., :-2]) / (epsilon * dy * dy)


def tumbling_rate(q: np.ndarray, rates: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Isotropic exchange Lambda(y) (<q>_v - q) over the normalized velocity measure"""
    average = np.tensordot(q, weights / weights.sum(), axes=([-2], [0]))[..., None, :]
    return rates * (average - q)


def solve_tridiagonal(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """
    Thomas algorithm over the last axis, batched over the leading ones.

    Every (x-cell, velocity) row carries its own drift and so its own matrix;
    scipy.linalg.solve_banded takes a single matrix per call and would need
    one call per row. The system is diagonally dominant (backward Euler on an
    upwind M-matrix), so no pivoting is required.
    """
    n = diag.shape[-1]
    c = np.empty_like(diag)
    d = np.empty_like(rhs)
    c[..., 0] = upper[..., 0] / diag[..., 0]
    d[..., 0] = rhs[..., 0] / diag[..., 0]
    for k in range(1, n):
        denominator = diag[..., k] - lower[..., k] * c[..., k - 1]
        c[..., k] = upper[..., k] / denominator
        d[..., k] = (rhs[..., k] - lower[..., k] * d[..., k - 1]) / denominator
    x = np.empty_like(rhs)
    x[..., -1] = d[..., -1]
    for k in range(n - 2, -1, -1):
        x[..., k] = d[..., k] - c[..., k] * x[..., k + 1]
    return x


class FullKineticSolver:
    """
    Time stepper for the full kinetic model on a FullGrid.

    Args:
        grid: phase-space grid
        signal: prescribed signal field
        pathway: pathway constants (epsilon and noise switch included)
        y_scheme: 'explicit' (sub-cycled upwind) or 'implicit' (backward Euler)
        truncation_tol: allowed share of mass in the outer y-cells
        workers: slice-parallel worker count, defaults to RT_THREADS
    """

    def __init__(self, grid: FullGrid, signal: SignalField, pathway: PathwayParams,
                 y_scheme: str = 'explicit', truncation_tol: float = 1e-6, workers: Optional[int] = None):
        if not math.isclose(grid.domain_length, signal.domain_length, rel_tol=1e-12):
            raise GridMismatchError(
                f"Grid length {grid.domain_length} differs from signal domain {signal.domain_length}"
            )
        if y_scheme not in Y_SCHEMES:
            raise ValidationError(f"Unknown y-scheme '{y_scheme}'. Valid schemes: {', '.join(Y_SCHEMES)}.")
        self.grid = grid
        self.signal = signal
        self.pathway = pathway
        self.y_scheme = y_scheme
        self.truncation_tol = truncation_tol
        self.workers = workers

        self.epsilon = pathway.epsilon
        self.tumbling_rates = np.asarray(tumbling_Lambda(grid.y_centers, pathway))
        y_faces = grid.y_faces
        self._face_restoring = y_faces * np.asarray(G(self.epsilon * y_faces, pathway))
        self._banded_cache = {}

    # ----- building blocks -----

    def pathwise_field(self, t: float) -> np.ndarray:
        """D_tM at the x-cell centres for every velocity, shape (nx, nv)"""
        return np.asarray(
            self.signal.pathwise_derivative(self.grid.x_centers[:, None], self.grid.velocities[None, :], t)
        )

    def face_velocity(self, t: float) -> np.ndarray:
        """y-drift -(D_tM + y G(epsilon y)) / epsilon on the y-faces, shape (nx, nv, ny+1)"""
        D = self.pathwise_field(t)
        return -(D[..., None] + self._face_restoring) / self.epsilon

    def initialize(self, ini: Optional[InitialSpec] = None) -> FullKineticState:
        return initialize(self.grid, self.signal, self.pathway, ini)

    def default_dt(self) -> float:
        return self.grid.cfl_limit()

    # ----- stages -----

    def _transport_x(self, q: np.ndarray, h: float) -> np.ndarray:
        return q + h * transport_x_rate(q, self.grid.velocities, self.grid.dx)

    def _diffusion_banded(self, h: float) -> np.ndarray:
        if h not in self._banded_cache:
            ny = self.grid.ny
            r = h / (self.epsilon * self.grid.dy ** 2)
            ab = np.zeros((3, ny))
            ab[0, 1:] = -r
            ab[1, :] = 1.0 + 2.0 * r
            ab[1, 0] = ab[1, -1] = 1.0 + r
            ab[2, :-1] = -r
            self._banded_cache = {h: ab}
        return self._banded_cache[h]

    def _diffuse(self, q: np.ndarray, h: float) -> np.ndarray:
        ny = self.grid.ny
        columns = q.reshape(-1, ny).T
        solved = solve_banded((1, 1), self._diffusion_banded(h), columns)
        return solved.T.reshape(q.shape)

    def _y_explicit(self, q: np.ndarray, a: np.ndarray, h: float, substeps: int) -> np.ndarray:
        sub = h / substeps
        for _ in range(substeps):
            q = q + sub * drift_y_rate(q, a, self.grid.dy)
        if self.pathway.noise_enabled:
            q = self._diffuse(q, h)
        return q

    def _y_implicit(self, q: np.ndarray, a: np.ndarray, h: float) -> np.ndarray:
        dy = self.grid.dy
        a_plus = np.maximum(a, 0.0)
        a_minus = np.minimum(a, 0.0)
        diag = (a_minus[..., :-1] - a_plus[..., 1:]) / dy
        upper = np.zeros_like(q)
        lower = np.zeros_like(q)
        upper[..., :-1] = -a_minus[..., 1:-1] / dy
        lower[..., 1:] = a_plus[..., 1:-1] / dy
        if self.pathway.noise_enabled:
            k = 1.0 / (self.epsilon * dy * dy)
            diag = diag - 2.0 * k
            diag[..., 0] += k
            diag[..., -1] += k
            upper[..., :-1] += k
            lower[..., 1:] += k
        return solve_tridiagonal(-h * lower, 1.0 - h * diag, -h * upper, q)

    def _y_stage(self, q: np.ndarray, a: np.ndarray, h: float) -> np.ndarray:
        out = np.empty_like(q)
        substeps = 1
        if self.y_scheme == 'explicit':
            max_speed = float(np.max(np.abs(a)))
            substeps = max(1, math.ceil(h * max_speed / (Y_COURANT * self.grid.dy)))

        def run_slice(sl: slice):
            if self.y_scheme == 'explicit':
                out[sl] = self._y_explicit(q[sl], a[sl], h, substeps)
            else:
                out[sl] = self._y_implicit(q[sl], a[sl], h)

        apply_in_slices(run_slice, self.grid.nx, self.workers)
        return out

    def _tumble(self, q: np.ndarray, dt: float) -> np.ndarray:
        weights = self.grid.weights / self.grid.total_weight
        average = np.tensordot(q, weights, axes=([1], [0]))[:, None, :]
        decay = np.exp(-self.tumbling_rates * dt)
        return average + (q - average) * decay

    def _check_truncation(self, state: FullKineticState) -> None:
        total = float(np.tensordot(state.q, self.grid.weights, axes=([1], [0])).sum())
        edge_q = np.concatenate([state.q[..., :EDGE_CELLS], state.q[..., -EDGE_CELLS:]], axis=-1)
        edge = float(np.tensordot(edge_q, self.grid.weights, axes=([1], [0])).sum())
        if edge > self.truncation_tol * total:
            logger.error(f"Mass at the y-boundary: {edge / total:.3e} of total at t={state.t:.4f}")
            raise TruncationError(
                f"{edge / total:.3e} of the mass lies within {EDGE_CELLS} cells of the y-boundary "
                f"at t={state.t:.4f}; widen y_halfwidth"
            )

    # ----- stepping -----

    def step(self, state: FullKineticState, dt: float) -> FullKineticState:
        """Advance one Strang-split step of length dt"""
        limit = self.grid.cfl_limit()
        if dt <= 0:
            raise ValidationError(f"Time step must be positive (dt={dt}).")
        if dt > limit * (1.0 + 1e-12):
            logger.error(f"x-transport CFL violated: dt={dt} > {limit}")
            raise StabilityError('x-transport', f"dt={dt} exceeds the upwind limit 0.9*dx/max|v| = {limit:.6g}")

        h = 0.5 * dt
        a = self.face_velocity(state.t + h)
        q = self._transport_x(state.q, h)
        q = self._y_stage(q, a, h)
        q = self._tumble(q, dt)
        q = self._y_stage(q, a, h)
        q = self._transport_x(q, h)

        new_state = FullKineticState(
            self.grid, q, state.t + dt, state.epsilon, state.total_mass_initial, state.steps + 1
        )
        self._check_truncation(new_state)
        return new_state

    def run(self, state: FullKineticState, t_end: float, dt: Optional[float] = None,
            snapshot_every: Optional[float] = None,
            on_snapshot: Optional[Callable[[FullKineticState], None]] = None) -> FullKineticState:
        """Step to t_end, calling on_snapshot at every snapshot instant"""
        dt = dt or self.default_dt()
        logger.info(
            f"Full kinetic run: {self.grid}, epsilon={self.epsilon}, noise={self.pathway.noise_enabled}, "
            f"dt={dt:.4g}, t_end={t_end}"
        )
        for target in snapshot_times(state.t, t_end, snapshot_every):
            while state.t < target - 1e-9 * max(1.0, target):
                state = self.step(state, min(dt, target - state.t))
            logger.debug(f"Snapshot at t={state.t:.4f}, mass drift {state.mass_drift():.2e}")
            if on_snapshot:
                on_snapshot(state)
        return state


def initialize(grid: FullGrid, signal: SignalField, pathway: PathwayParams,
               ini: Optional[InitialSpec] = None) -> FullKineticState:
    """Build the initial state and record its mass"""
    ini = ini or InitialSpec()
    if not math.isclose(grid.domain_length, signal.domain_length, rel_tol=1e-12):
        raise GridMismatchError(f"Grid length {grid.domain_length} differs from signal domain {signal.domain_length}")

    if ini.table is not None:
        q = np.array(ini.table, dtype=float)
        if q.shape != grid.shape:
            raise ValidationError(f"Initial table has shape {q.shape}, expected {grid.shape}.")
    else:
        x_part = np.ones(grid.nx) if ini.x_profile is None else np.asarray(ini.x_profile, dtype=float)
        v_part = np.ones(grid.nv) if ini.v_profile is None else np.asarray(ini.v_profile, dtype=float)
        if x_part.shape != (grid.nx,) or v_part.shape != (grid.nv,):
            raise ValidationError("Initial x/v profiles must have one entry per x-cell / velocity.")
        if ini.dirac:
            y_part = np.zeros(grid.ny)
            k = int(np.clip(math.floor((ini.y_mean - grid.y_min) / grid.dy), 0, grid.ny - 1))
            y_part[k] = 1.0
        else:
            variance = ini.y_variance if ini.y_variance is not None else 1.0 / pathway.G0
            if variance <= 0:
                raise ValidationError(f"Initial y-variance ({variance}) must be positive.")
            y_part = np.exp(-0.5 * (grid.y_centers - ini.y_mean) ** 2 / variance)
        q = x_part[:, None, None] * v_part[None, :, None] * y_part[None, None, :]

    if np.any(q < 0) or not np.all(np.isfinite(q)):
        raise ValidationError("Initial profile must be finite and nonnegative.")
    raw_mass = float(np.tensordot(q, grid.weights, axes=([1], [0])).sum() * grid.dx * grid.dy)
    if raw_mass <= 0:
        raise DegenerateInputError("Initial profile carries no mass")
    if ini.mass <= 0:
        raise ValidationError(f"Initial mass ({ini.mass}) must be positive.")

    q *= ini.mass / raw_mass
    state = FullKineticState(grid, q, 0.0, pathway.epsilon, ini.mass)
    logger.debug(f"Initialized {grid} with mass {state.mass():.6f}")
    return state


def step(state: FullKineticState, signal: SignalField, pathway: PathwayParams, dt: float, **options) -> FullKineticState:
    """One split step; options are passed to FullKineticSolver"""
    return FullKineticSolver(state.grid, signal, pathway, **options).step(state, dt)


def marginal(state: FullKineticState) -> np.ndarray:
    """y-integrated density over (x-cell, velocity)"""
    return state.q.sum(axis=-1) * state.grid.dy


def y_profile(state: FullKineticState) -> np.ndarray:
    """Density in y integrated over x and v"""
    grid = state.grid
    return np.tensordot(state.q, grid.weights, axes=([1], [0])).sum(axis=0) * grid.dx


def reconstruct_p(state: FullKineticState, signal: SignalField, x: float, v: float, m) -> np.ndarray:
    """
    Density in methylation p(x, v, m) = q(x, v, (m - M)/epsilon) / epsilon,
    linearly interpolated between y-cell centres and zero outside the y-interval.
    """
    grid = state.grid
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise ValidationError("Methylation levels must be nonnegative.")
    i = int(grid.x_index(x))
    j = grid.velocity_index(v)
    M = float(signal.methylation(grid.x_centers[i], state.t))
    y = (m - M) / state.epsilon
    values = np.interp(y, grid.y_centers, state.q[i, j])
    values = np.where((y < grid.y_min) | (y > grid.y_max), 0.0, values)
    return values / state.epsilon


def dense_generator(grid: FullGrid, signal: SignalField, pathway: PathwayParams, t: float = 0.0) -> np.ndarray:
    """
    Matrix of the unsplit semi-discrete system at time t, acting on q.ravel().

    Only meant for small grids.
    """
    solver = FullKineticSolver(grid, signal, pathway)
    n = int(np.prod(grid.shape))
    basis = np.eye(n).reshape((n,) + grid.shape)
    a = solver.face_velocity(t)

    rate = transport_x_rate(basis, grid.velocities, grid.dx)
    rate += drift_y_rate(basis, a, grid.dy)
    if pathway.noise_enabled:
        rate += diffusion_y_rate(basis, grid.dy, pathway.epsilon)
    rate += tumbling_rate(basis, solver.tumbling_rates, grid.weights)
    return rate.reshape(n, n).T
