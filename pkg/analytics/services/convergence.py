"""
Epsilon-convergence study

For each epsilon the full model is run to a common time from the same
initial marginal as the limit model; the study records the relative L1
distance between the two density and flux profiles together with the
blow-up statistics seen along the way.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import pandas as pd
from django.core.exceptions import ValidationError

from chemotaxis_lab.exceptions import SimulationError
from chemotaxis_lab.parallel import map_ordered, worker_count
from kinetics.services.full_solver import FullKineticSolver, InitialSpec, marginal
from kinetics.services.grid import FullGrid
from kinetics.services.limit_solver import KernelMode, LimitKineticSolver, from_marginal
from signaling.services.pathway import PathwayParams
from signaling.services.signal_field import SignalField
from .diagnostics import ConcentrationRecord, concentration_record, density_flux, l1_distance, marginal_growth_rate

logger = logging.getLogger(__name__)

STUDY_COLUMNS = ['epsilon', 'l1_rho', 'l1_J', 'second_moment_max', 'y_variance_final']


@dataclass
class ConvergenceRow:
    epsilon: float
    l1_rho: float
    l1_J: float
    second_moment_max: float
    y_variance_final: float
    mass_drift: float = 0.0
    growth_rate: float = 0.0
    trail: List[ConcentrationRecord] = field(default_factory=list, repr=False)


@dataclass
class ConvergenceStudy:
    rows: List[ConvergenceRow]
    t_end: float

    @property
    def distances(self) -> List[float]:
        return [row.l1_rho for row in self.rows]

    @property
    def passed(self) -> bool:
        return convergence_verdict(self.distances)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{key: getattr(row, key) for key in STUDY_COLUMNS} for row in self.rows],
                            columns=STUDY_COLUMNS)

    def verdict(self) -> dict:
        return {
            'verdict': 'PASS' if self.passed else 'FAIL',
            't_end': self.t_end,
            'epsilon': [row.epsilon for row in self.rows],
            'l1_rho': self.distances,
            'mass_drift_max': max(row.mass_drift for row in self.rows),
            'growth_rate_max': max(row.growth_rate for row in self.rows),
            'trails': {str(row.epsilon): [asdict(r) for r in row.trail] for row in self.rows},
        }


def convergence_verdict(distances: Sequence[float]) -> bool:
    """Strictly decreasing and the last distance below half the first"""
    if len(distances) < 2:
        return False
    decreasing = all(b < a for a, b in zip(distances, distances[1:]))
    return decreasing and distances[-1] < 0.5 * distances[0]


def convergence_study(signal: SignalField, pathway: PathwayParams, grid: FullGrid, eps_list: Sequence[float],
                      t_end: float, dt: Optional[float] = None, y_scheme: str = 'explicit',
                      snapshot_every: Optional[float] = None, ini: Optional[InitialSpec] = None,
                      truncation_tol: float = 1e-6) -> ConvergenceStudy:
    """
    Run the limit model once and the full model for every epsilon.

    The kernel of the limit model follows pathway.noise_enabled. Runs for
    different epsilons execute concurrently; rows come back in eps_list order.
    """
    eps_list = [float(eps) for eps in eps_list]
    if not eps_list:
        raise ValidationError("Convergence study needs at least one epsilon.")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValidationError(f"Epsilon list {eps_list} must be strictly decreasing.")
    dt = dt or grid.cfl_limit()
    outer = min(worker_count(), len(eps_list))
    inner = 1 if outer > 1 else None

    reference = FullKineticSolver(grid, signal, pathway.replace(epsilon=eps_list[0])).initialize(ini)
    kernel_mode = KernelMode.NOISE if pathway.noise_enabled else KernelMode.DETERMINISTIC
    limit_solver = LimitKineticSolver(grid, signal, pathway, kernel_mode=kernel_mode)
    limit_state = limit_solver.run(from_marginal(grid, marginal(reference), 0.0, kernel_mode), t_end, dt=dt)
    limit_profile = density_flux(limit_state)
    logger.info(f"Limit reference ready at t={limit_state.t:.4f}, mass drift {limit_state.mass_drift():.2e}")

    def run_one(epsilon: float) -> ConvergenceRow:
        params = pathway.replace(epsilon=epsilon)
        solver = FullKineticSolver(grid, signal, params, y_scheme=y_scheme,
                                   truncation_tol=truncation_tol, workers=inner)
        trail = []
        try:
            state = solver.initialize(ini)
            trail.append(concentration_record(state))
            state = solver.run(state, t_end, dt=dt, snapshot_every=snapshot_every,
                               on_snapshot=lambda s: trail.append(concentration_record(s)))
        except SimulationError as e:
            logger.error(f"Convergence run failed at epsilon={epsilon}: {e}")
            e.epsilon = epsilon
            raise
        distance = l1_distance(limit_profile, density_flux(state))
        logger.info(f"epsilon={epsilon}: l1_rho={distance.rho:.4e}, l1_J={distance.J:.4e}")
        return ConvergenceRow(
            epsilon=epsilon,
            l1_rho=distance.rho,
            l1_J=distance.J,
            second_moment_max=max(record.second_moment for record in trail),
            y_variance_final=trail[-1].y_variance,
            mass_drift=state.mass_drift(),
            growth_rate=marginal_growth_rate(trail),
            trail=trail,
        )

    rows = map_ordered(run_one, eps_list, outer)
    study = ConvergenceStudy(rows, float(t_end))
    logger.info(f"Convergence verdict: {'PASS' if study.passed else 'FAIL'}")
    return study
