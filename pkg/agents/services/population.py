"""
Cell-level run-and-tumble simulator

Each cell carries a periodic position, a velocity from the discrete set and
a methylation level. Per step of length dt:

1. methylation relaxes toward the equilibrium seen along the current run
   (frozen-coefficient exponential steps, or Euler-Maruyama with reflection
   at m = 0 when noise is enabled),
2. the cell tumbles with probability 1 - exp(-Lambda(y) dt) and redraws
   its velocity from the velocity set,
3. the cell moves x <- x + v dt on the periodic domain.

Random numbers come from a Philox counter stream keyed by the seed with the
step index in the counter, agent i always consuming position i of each draw.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError

from chemotaxis_lab.exceptions import GridMismatchError, StabilityError
from kinetics.services.grid import FullGrid, snapshot_times
from signaling.services.pathway import G, PathwayParams, adaptation_f, tumbling_Lambda
from signaling.services.signal_field import SignalField

logger = logging.getLogger(__name__)

# Upper bound of Lambda * dt for the tumble decision
THINNING_BOUND = 0.2

# Upper bound of (G(0)/epsilon) * substep for the methylation update
SUBSTEP_STIFFNESS = 0.02


@dataclass(frozen=True)
class Agent:
    x: float
    v: float
    m: float


def max_stable_dt(pathway: PathwayParams) -> float:
    """Largest agent step allowed by the thinning bound"""
    return THINNING_BOUND / pathway.lambda_plus


def step_generator(seed: int, step_index: int) -> np.random.Generator:
    """Independent stream for one step; index 0 is reserved for initialization"""
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, step_index]))


class AgentPopulation:
    """
    Fixed-size population stored as parallel arrays.

    Args:
        x, v_index, m: per-agent position, velocity index and methylation
        velocities, weights: velocity set and its quadrature weights
        domain_length: period of the x-domain
        pathway: pathway constants
        seed: 64-bit seed of the counter-based stream
    """

    def __init__(self, x: np.ndarray, v_index: np.ndarray, m: np.ndarray, velocities: Sequence[float],
                 weights: Sequence[float], domain_length: float, pathway: PathwayParams, seed: int,
                 t: float = 0.0, step_index: int = 0):
        self.x = np.asarray(x, dtype=float)
        self.v_index = np.asarray(v_index, dtype=np.int64)
        self.m = np.asarray(m, dtype=float)
        self.velocities = np.asarray(velocities, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.domain_length = float(domain_length)
        self.params = pathway
        self.rng_seed = int(seed)
        self.t = float(t)
        self.step_index = int(step_index)
        self.tumbled = np.zeros(self.count, dtype=bool)

    @classmethod
    def create(cls, n_cells: int, signal: SignalField, pathway: PathwayParams, velocities: Sequence[float],
               weights: Optional[Sequence[float]] = None, seed: int = 0,
               y_variance: Optional[float] = None) -> 'AgentPopulation':
        """
        Uniform positions and velocities; y = (m - M)/epsilon Gaussian with
        variance y_variance (default 1/G(0), 0 puts every cell at M).
        """
        if n_cells < 1:
            raise ValidationError(f"Population needs at least one cell (n_cells={n_cells}).")
        if not 0 <= seed < 2 ** 64:
            raise ValidationError(f"Seed ({seed}) must be a 64-bit unsigned integer.")
        velocities = np.asarray(velocities, dtype=float)
        weights = np.ones_like(velocities) if weights is None else np.asarray(weights, dtype=float)
        variance = 1.0 / pathway.G0 if y_variance is None else float(y_variance)
        if variance < 0:
            raise ValidationError(f"Initial y-variance ({variance}) must be nonnegative.")

        rng = step_generator(seed, 0)
        x = rng.random(n_cells) * signal.domain_length
        v_index = _draw_velocity(rng.random(n_cells), weights)
        y = rng.standard_normal(n_cells) * math.sqrt(variance)
        m = np.abs(np.asarray(signal.methylation(x, 0.0)) + pathway.epsilon * y)
        logger.debug(f"Created {n_cells} agents with seed {seed}")
        return cls(x, v_index, m, velocities, weights, signal.domain_length, pathway, seed)

    @property
    def count(self) -> int:
        return self.x.size

    @property
    def v(self) -> np.ndarray:
        return self.velocities[self.v_index]

    def agent(self, i: int) -> Agent:
        return Agent(float(self.x[i]), float(self.v[i]), float(self.m[i]))

    def y_offsets(self, signal: SignalField) -> np.ndarray:
        """Blow-up coordinates (m - M)/epsilon at the current time"""
        return (self.m - np.asarray(signal.methylation(self.x, self.t))) / self.params.epsilon

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'x': self.x, 'v': self.v, 'm': self.m})

    def __repr__(self):
        return f"AgentPopulation(count={self.count}, t={self.t:.4f}, seed={self.rng_seed})"


def _draw_velocity(uniforms: np.ndarray, weights: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(weights) / weights.sum()
    return np.minimum(np.searchsorted(cumulative, uniforms, side='right'), weights.size - 1)


def _relax_deterministic(r: np.ndarray, D: np.ndarray, pathway: PathwayParams, dt: float, substeps: int) -> np.ndarray:
    """Frozen-G exponential steps for dr/dt = -G(r) r / epsilon - D"""
    h = dt / substeps
    for _ in range(substeps):
        rate = np.asarray(G(r, pathway)) / pathway.epsilon
        decay = np.exp(-rate * h)
        r = r * decay - D * (1.0 - decay) / rate
    return r


def _relax_noisy(m: np.ndarray, M0: np.ndarray, D: np.ndarray, pathway: PathwayParams, dt: float,
                 normals: np.ndarray) -> np.ndarray:
    """Euler-Maruyama for dm = f(m - M)/epsilon dt + sqrt(2 epsilon) dW, reflected at 0"""
    substeps = normals.shape[0]
    h = dt / substeps
    amplitude = math.sqrt(2.0 * pathway.epsilon * h)
    for k in range(substeps):
        M = M0 + D * (k * h)
        m = m + np.asarray(adaptation_f(m - M, pathway)) / pathway.epsilon * h + amplitude * normals[k]
        m = np.abs(m)
    return m


def step(pop: AgentPopulation, signal: SignalField, dt: float) -> AgentPopulation:
    """Advance every agent by dt in place and return the population"""
    pathway = pop.params
    if dt <= 0:
        raise ValidationError(f"Time step must be positive (dt={dt}).")
    if pathway.lambda_plus * dt > THINNING_BOUND * (1.0 + 1e-12):
        logger.error(f"Thinning bound violated: lambda_plus*dt = {pathway.lambda_plus * dt:.3f}")
        raise StabilityError(
            'thinning', f"lambda_plus*dt = {pathway.lambda_plus * dt:.4g} exceeds {THINNING_BOUND}; "
                        f"use dt <= {max_stable_dt(pathway):.4g}"
        )

    n = pop.count
    substeps = max(1, math.ceil(pathway.G0 / pathway.epsilon * dt / SUBSTEP_STIFFNESS))
    rng = step_generator(pop.rng_seed, pop.step_index + 1)
    normals = rng.standard_normal((substeps, n)) if pathway.noise_enabled else None
    tumble_draw = rng.random(n)
    velocity_draw = rng.random(n)

    # M along the current run is linear over the step: M0 + D s
    v = pop.v
    M0 = np.asarray(signal.methylation(pop.x, pop.t))
    D = np.asarray(signal.pathwise_derivative(pop.x, v, pop.t))
    M_end = M0 + D * dt
    if pathway.noise_enabled:
        pop.m = _relax_noisy(pop.m, M0, D, pathway, dt, normals)
    else:
        r = _relax_deterministic(pop.m - M0, D, pathway, dt, substeps)
        pop.m = np.abs(M_end + r)

    rates = np.asarray(tumbling_Lambda((pop.m - M_end) / pathway.epsilon, pathway))
    pop.tumbled = tumble_draw < -np.expm1(-rates * dt)
    redrawn = _draw_velocity(velocity_draw, pop.weights)
    pop.v_index = np.where(pop.tumbled, redrawn, pop.v_index)

    pop.x = np.mod(pop.x + pop.v * dt, pop.domain_length)
    pop.t += dt
    pop.step_index += 1
    return pop


def bin_population(pop: AgentPopulation, grid: FullGrid):
    """
    Density and flux over the x-cells of grid, normalized so that
    sum(rho) * dx = 1.
    """
    if not math.isclose(grid.domain_length, pop.domain_length, rel_tol=1e-12):
        raise GridMismatchError(f"Grid length {grid.domain_length} differs from the population domain")
    cells = grid.x_index(pop.x)
    scale = 1.0 / (pop.count * grid.dx)
    rho = np.bincount(cells, minlength=grid.nx) * scale
    J = np.bincount(cells, weights=pop.v, minlength=grid.nx) * scale
    return rho, J


def run(pop: AgentPopulation, signal: SignalField, t_end: float, dt: Optional[float] = None,
        snapshot_every: Optional[float] = None,
        on_snapshot: Optional[Callable[[AgentPopulation], None]] = None) -> AgentPopulation:
    """Step to t_end, calling on_snapshot at every snapshot instant"""
    dt = dt or max_stable_dt(pop.params)
    logger.info(f"Agent run: {pop.count} cells, dt={dt:.4g}, t_end={t_end}, noise={pop.params.noise_enabled}")
    for target in snapshot_times(pop.t, t_end, snapshot_every):
        while pop.t < target - 1e-9 * max(1.0, target):
            step(pop, signal, min(dt, target - pop.t))
        logger.debug(f"Agent snapshot at t={pop.t:.4f}")
        if on_snapshot:
            on_snapshot(pop)
    return pop
