"""
Phase-space grid shared by the kinetic solvers
"""
import logging
import math
from typing import Optional, Sequence

import numpy as np
from django.core.exceptions import ValidationError

logger = logging.getLogger(__name__)

MIN_Y_CELLS = 16


def velocity_set(v0: float, count: int = 2) -> np.ndarray:
    """Symmetric run speeds in [-v0, v0]; two velocities give {-v0, +v0}"""
    if count < 2:
        raise ValidationError("A velocity set needs at least two speeds.")
    return np.linspace(-v0, v0, count)


class FullGrid:
    """
    Periodic x-cells, a discrete velocity set with quadrature weights and a
    truncated blow-up interval [-y_halfwidth, y_halfwidth].

    The limit solver reuses the x and velocity parts and ignores y.
    """

    def __init__(
        self,
        nx: int,
        domain_length: float,
        velocities: Sequence[float],
        weights: Optional[Sequence[float]] = None,
        ny: int = 128,
        y_halfwidth: float = 3.0,
    ):
        self.nx = int(nx)
        self.domain_length = float(domain_length)
        self.velocities = np.asarray(velocities, dtype=float)
        self.weights = np.ones_like(self.velocities) if weights is None else np.asarray(weights, dtype=float)
        self.ny = int(ny)
        self.y_min = -float(y_halfwidth)
        self.y_max = float(y_halfwidth)

        errors = []
        if self.nx < 1:
            errors.append(f"Grid needs at least one x-cell (nx={self.nx}).")
        if self.domain_length <= 0:
            errors.append(f"Domain length ({self.domain_length}) must be positive.")
        if self.velocities.ndim != 1 or self.velocities.size < 2:
            errors.append("Velocity set needs at least two speeds.")
        elif self.weights.shape != self.velocities.shape or np.any(self.weights <= 0):
            errors.append("Velocity weights must be positive, one per velocity.")
        if self.ny < MIN_Y_CELLS:
            errors.append(f"Blow-up grid needs at least {MIN_Y_CELLS} cells (ny={self.ny}).")
        if y_halfwidth <= 0:
            errors.append(f"Blow-up half-width ({y_halfwidth}) must be positive.")
        if errors:
            raise ValidationError(errors)

        self.dx = self.domain_length / self.nx
        self.dy = (self.y_max - self.y_min) / self.ny

    @classmethod
    def two_velocity(cls, nx: int, domain_length: float, v0: float, **kwargs) -> 'FullGrid':
        return cls(nx, domain_length, velocity_set(v0), **kwargs)

    @property
    def nv(self) -> int:
        return self.velocities.size

    @property
    def shape(self):
        return self.nx, self.nv, self.ny

    @property
    def total_weight(self) -> float:
        """|V|, the quadrature measure of the velocity set"""
        return float(self.weights.sum())

    @property
    def x_centers(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y_centers(self) -> np.ndarray:
        return self.y_min + (np.arange(self.ny) + 0.5) * self.dy

    @property
    def y_faces(self) -> np.ndarray:
        return self.y_min + np.arange(self.ny + 1) * self.dy

    @property
    def max_speed(self) -> float:
        return float(np.max(np.abs(self.velocities)))

    def cfl_limit(self, safety: float = 0.9) -> float:
        """Largest dt allowed by the upwind x-transport"""
        return safety * self.dx / self.max_speed

    def required_halfwidth(self, u_max: float, G0: float) -> float:
        """Support of the limit profile plus three noise standard deviations"""
        return abs(u_max) / G0 + 3.0 / math.sqrt(G0)

    def check_coverage(self, u_max: float, G0: float) -> None:
        required = self.required_halfwidth(u_max, G0)
        if self.y_max <= required:
            raise ValidationError(
                f"Blow-up half-width {self.y_max} does not cover the limit profile "
                f"(needs > {required:.4f} for max|D_tM| = {u_max:.4g}, G(0) = {G0})."
            )

    def velocity_index(self, v: float) -> int:
        index = int(np.argmin(np.abs(self.velocities - v)))
        if not math.isclose(self.velocities[index], v, rel_tol=1e-9, abs_tol=1e-12):
            raise ValidationError(f"Velocity {v} is not part of the velocity set.")
        return index

    def x_index(self, x) -> np.ndarray:
        xw = np.mod(np.asarray(x, dtype=float), self.domain_length)
        return np.minimum((xw / self.dx).astype(int), self.nx - 1)

    def same_as(self, other: 'FullGrid') -> bool:
        return (
            self.nx == other.nx
            and math.isclose(self.domain_length, other.domain_length)
            and np.array_equal(self.velocities, other.velocities)
            and np.array_equal(self.weights, other.weights)
        )

    def describe(self) -> dict:
        return {
            'nx': self.nx,
            'dx': self.dx,
            'domain_length': self.domain_length,
            'velocities': self.velocities.tolist(),
            'weights': self.weights.tolist(),
            'ny': self.ny,
            'y_min': self.y_min,
            'y_max': self.y_max,
            'dy': self.dy,
        }

    def __repr__(self):
        return f"FullGrid(nx={self.nx}, nv={self.nv}, ny={self.ny}, L={self.domain_length})"


def snapshot_times(t_start: float, t_end: float, every: Optional[float] = None) -> list:
    """Snapshot instants after t_start up to and including t_end"""
    if t_end < t_start:
        raise ValidationError(f"End time {t_end} precedes start time {t_start}.")
    if not every or every <= 0 or every >= t_end - t_start:
        return [float(t_end)]
    count = int(math.floor((t_end - t_start) / every + 1e-9))
    times = [t_start + every * (k + 1) for k in range(count)]
    if not math.isclose(times[-1], t_end, rel_tol=1e-12, abs_tol=1e-12):
        times.append(float(t_end))
    else:
        times[-1] = float(t_end)
    return times
