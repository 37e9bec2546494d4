"""
Diagnostics shared by the three models

Profiles (density and flux over x-cells), concentration statistics of the
full model in the blow-up coordinate, circular mass centres, phase shifts
against the signal and relative L1 distances between profiles.
"""
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError
from django.db import models
from scipy.optimize import curve_fit

from agents.services.population import AgentPopulation, bin_population
from chemotaxis_lab.exceptions import DegenerateInputError, GridMismatchError
from kinetics.services.full_solver import FullKineticState, marginal, y_profile
from kinetics.services.grid import FullGrid
from kinetics.services.limit_solver import LimitKineticState
from signaling.services.signal_field import SignalField, SignalKind

logger = logging.getLogger(__name__)

# Resultants shorter than this share of the mass have no direction
DEGENERATE_RESULTANT = 1e-6


class ProfileSource(models.TextChoices):
    AGENTS = 'agents', 'Agent population'
    FULL = 'full', 'Full kinetic model'
    LIMIT = 'limit', 'Limit kinetic model'


@dataclass
class ProfileRecord:
    """Density rho and flux J over the x-cells of a periodic domain at time t"""
    t: float
    rho: np.ndarray
    J: np.ndarray
    mass: float
    source: str
    domain_length: float

    @property
    def nx(self) -> int:
        return self.rho.size

    @property
    def dx(self) -> float:
        return self.domain_length / self.nx

    @property
    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'x': self.x_centers, 'rho': self.rho, 'J': self.J})

    def comoving_frame(self, wave_speed: float) -> pd.DataFrame:
        """Profile against xi = (x - u t) mod L, sorted by xi"""
        xi = np.mod(self.x_centers - wave_speed * self.t, self.domain_length)
        frame = pd.DataFrame({'xi': xi, 'rho': self.rho, 'J': self.J})
        return frame.sort_values('xi', kind='mergesort').reset_index(drop=True)


@dataclass
class ConcentrationRecord:
    """Blow-up statistics of a full-model state"""
    t: float
    y_mean: float
    y_variance: float
    second_moment: float
    linf_marginal: float

    def to_dict(self) -> dict:
        return asdict(self)


class ProfileDistance(NamedTuple):
    rho: float
    J: float


def _record(qbar: np.ndarray, grid: FullGrid, t: float, source: str) -> ProfileRecord:
    rho = qbar @ grid.weights
    J = qbar @ (grid.weights * grid.velocities)
    return ProfileRecord(t, rho, J, float(rho.sum() * grid.dx), source, grid.domain_length)


def density_flux(obj, grid: Optional[FullGrid] = None) -> ProfileRecord:
    """
    Profile of a full state, a limit state or an agent population.

    Agent populations need the grid to bin on and are normalized to unit mass.
    """
    if isinstance(obj, FullKineticState):
        return _record(marginal(obj), obj.grid, obj.t, ProfileSource.FULL)
    if isinstance(obj, LimitKineticState):
        return _record(obj.pbar, obj.grid, obj.t, ProfileSource.LIMIT)
    if isinstance(obj, AgentPopulation):
        if grid is None:
            raise ValidationError("Binning an agent population needs a grid.")
        rho, J = bin_population(obj, grid)
        return ProfileRecord(obj.t, rho, J, float(rho.sum() * grid.dx), ProfileSource.AGENTS, grid.domain_length)
    raise ValidationError(f"Cannot build a profile from {type(obj).__name__}.")


def concentration_record(state: FullKineticState) -> ConcentrationRecord:
    grid = state.grid
    y = grid.y_centers
    profile = y_profile(state)
    mass = float(profile.sum() * grid.dy)
    if mass <= 0:
        raise DegenerateInputError("State carries no mass")
    mean = float((y * profile).sum() * grid.dy / mass)
    variance = float(((y - mean) ** 2 * profile).sum() * grid.dy / mass)
    second_moment = float((y ** 2 * profile).sum() * grid.dy)
    return ConcentrationRecord(state.t, mean, max(variance, 0.0), second_moment, float(marginal(state).max()))


def mass_center(rho: Sequence[float], domain_length: float) -> float:
    """Circular first moment of a periodic profile, in [0, domain_length)"""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise ValidationError("Profile must be nonnegative.")
    total = rho.sum()
    if total <= 0:
        raise DegenerateInputError("Profile carries no mass")
    theta = 2 * np.pi * (np.arange(rho.size) + 0.5) / rho.size
    resultant = complex((rho * np.exp(1j * theta)).sum())
    if abs(resultant) < DEGENERATE_RESULTANT * total:
        raise DegenerateInputError(f"Resultant {abs(resultant):.3e} too short for a mass centre")
    angle = math.atan2(resultant.imag, resultant.real) % (2 * np.pi)
    return float(angle * domain_length / (2 * np.pi)) % domain_length


def signed_circular_distance(a: float, b: float, domain_length: float) -> float:
    """b - a wrapped to [-L/2, L/2)"""
    half = 0.5 * domain_length
    return float((b - a + half) % domain_length - half)


def phase_shift(rho: Sequence[float], signal: SignalField, t: float) -> float:
    """
    Signed distance from the ligand mass centre to the density mass centre.

    Both centres move with the wave, so the result is the offset in the
    co-moving frame.
    """
    if signal.spec.kind not in (SignalKind.TRAVELING_WAVE, SignalKind.STATIC):
        raise ValidationError(f"Phase shifts need a wave-shaped signal, not '{signal.spec.kind}'.")
    rho = np.asarray(rho, dtype=float)
    L = signal.domain_length
    x = (np.arange(rho.size) + 0.5) * L / rho.size
    ligand_center = mass_center(np.asarray(signal.ligand(x, t)), L)
    density_center = mass_center(rho, L)
    return signed_circular_distance(ligand_center, density_center, L)


def l1_distance(a: ProfileRecord, b: ProfileRecord) -> ProfileDistance:
    """Relative L1 distances of rho and J, both scaled by the mass of a"""
    if a.nx != b.nx or not math.isclose(a.domain_length, b.domain_length, rel_tol=1e-12):
        raise GridMismatchError(
            f"Profiles on different grids: nx {a.nx} vs {b.nx}, L {a.domain_length} vs {b.domain_length}"
        )
    reference = float(a.rho.sum() * a.dx)
    if reference <= 0:
        raise DegenerateInputError("Reference profile carries no mass")
    return ProfileDistance(
        rho=float(np.abs(a.rho - b.rho).sum() * a.dx / reference),
        J=float(np.abs(a.J - b.J).sum() * a.dx / reference),
    )


def _gaussian(y, mean, variance):
    return np.exp(-0.5 * (y - mean) ** 2 / variance) / np.sqrt(2 * np.pi * variance)


def fit_gaussian_variance(y: Sequence[float], profile: Sequence[float]) -> float:
    """Variance of the normalized Gaussian best fitting a y-profile"""
    y = np.asarray(y, dtype=float)
    profile = np.asarray(profile, dtype=float)
    dy = float(y[1] - y[0])
    mass = float(profile.sum() * dy)
    if mass <= 0:
        raise DegenerateInputError("y-profile carries no mass")
    density = profile / mass
    mean = float((y * density).sum() * dy)
    variance = float(((y - mean) ** 2 * density).sum() * dy)
    if variance <= 0:
        raise DegenerateInputError("y-profile is concentrated in one cell")
    (_, fitted), _ = curve_fit(
        _gaussian, y, density, p0=(mean, variance), bounds=([y[0], 1e-12], [y[-1], np.inf]),
    )
    return float(fitted)


def second_moment_bound(initial_moment: float, u_max: float, g_minus: float, mass: float,
                        epsilon: float, t: float) -> float:
    """Gronwall bound exp(-t g-/eps) Y0 + u_max^2 mass / g-^2 on the y second moment"""
    if g_minus <= 0:
        raise ValidationError(f"Lower restoring bound g- ({g_minus}) must be positive.")
    return math.exp(-t * g_minus / epsilon) * initial_moment + u_max ** 2 * mass / g_minus ** 2


def marginal_growth_rate(trail: Sequence[ConcentrationRecord]) -> float:
    """Smallest C >= 0 with max qbar(t) <= max qbar(t0) exp(C (t - t0)) along a trail"""
    if len(trail) < 2:
        return 0.0
    first = trail[0]
    rates = [
        math.log(record.linf_marginal / first.linf_marginal) / (record.t - first.t)
        for record in trail[1:] if record.t > first.t
    ]
    return max([0.0] + rates)


def test_function_moment(state: FullKineticState, signal: SignalField,
                         phi: Callable[[np.ndarray], np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Moment int q(x, v, y) phi(M + eps y) dy over (x-cell, velocity) and its
    limit value qbar phi(M).
    """
    grid = state.grid
    M = np.asarray(signal.methylation(grid.x_centers, state.t), dtype=float)
    m = M[:, None] + state.epsilon * grid.y_centers[None, :]
    moment = np.einsum('ijk,ik->ij', state.q, np.asarray(phi(m), dtype=float)) * grid.dy
    limit = marginal(state) * np.asarray(phi(M), dtype=float)[:, None]
    return moment, limit
