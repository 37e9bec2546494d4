"""
Run configuration

A run is described by sectioned key/value text (INI) or by the metadata
JSON of a previous run. Keys missing from the file fall back to the model
defaults declared in settings. Every cross-module constraint (upwind CFL,
blow-up coverage, agent thinning bound) is checked before a run starts.
"""
import configparser
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.exceptions import ValidationError

from agents.services.population import THINNING_BOUND
from chemotaxis_lab.config import ConfigManager
from kinetics.services.full_solver import Y_SCHEMES
from kinetics.services.grid import FullGrid, velocity_set
from kinetics.services.limit_solver import KernelMode
from signaling.services.pathway import PathwayParams
from signaling.services.signal_field import LogSensingParams, SignalField, SignalKind, SignalSpec

logger = logging.getLogger(__name__)

TRUE_VALUES = {'1', 'true', 'yes', 'on'}
FALSE_VALUES = {'0', 'false', 'no', 'off'}


def _signal(key, default):
    return field(default_factory=lambda: ConfigManager.get_signal_config(key, default))


def _pathway(key, default):
    return field(default_factory=lambda: ConfigManager.get_pathway_config(key, default))


def _grid(key, default):
    return field(default_factory=lambda: ConfigManager.get_grid_config(key, default))


def _solver(key, default):
    return field(default_factory=lambda: ConfigManager.get_solver_config(key, default))


def _agents(key, default):
    return field(default_factory=lambda: ConfigManager.get_agents_config(key, default))


def _study(key, default):
    return field(default_factory=lambda: ConfigManager.get_study_config(key, default))


@dataclass
class SignalSection:
    kind: str = _signal('KIND', SignalKind.TRAVELING_WAVE)
    S0_uM: float = _signal('S0_UM', 500.0)
    SA_uM: float = _signal('SA_UM', 100.0)
    ell_um: float = _signal('ELL_UM', 800.0)
    u_um_per_s: float = _signal('U_UM_PER_S', 0.4)
    ramp_rate_per_s: float = _signal('RAMP_RATE_PER_S', 0.5)
    ramp_window_s: float = _signal('RAMP_WINDOW_S', 10.0)
    m0: float = _signal('M0', 1.0)
    K_I_uM: float = _signal('K_I_UM', 18.2)
    K_A_uM: float = _signal('K_A_UM', 3000.0)
    table_path: str = ''


@dataclass
class PathwaySection:
    N: int = _pathway('N', 6)
    alpha: float = _pathway('ALPHA', 1.7)
    a0: float = _pathway('A0', 0.5)
    z0_per_s: float = _pathway('Z0_PER_S', 0.14)
    tau_s: float = _pathway('TAU_S', 0.8)
    H: float = _pathway('H', 10.0)
    sigma: float = _pathway('SIGMA', 1.0)
    epsilon: float = _pathway('EPSILON', 0.1)
    noise_enabled: bool = _pathway('NOISE_ENABLED', False)
    quadrature_order: int = _pathway('QUADRATURE_ORDER', 64)


@dataclass
class GridSection:
    nx: int = _grid('NX', 200)
    ny: int = _grid('NY', 128)
    y_halfwidth: float = _grid('Y_HALFWIDTH', 3.0)
    v0_um_per_s: float = _grid('V0_UM_PER_S', 20.0)
    n_velocities: int = 2


@dataclass
class SolverSection:
    dt_s: float = _solver('DT_S', 0.0)
    t_end_s: float = _solver('T_END_S', 400.0)
    snapshot_every_s: float = _solver('SNAPSHOT_EVERY_S', 100.0)
    kernel_mode: str = _solver('KERNEL_MODE', KernelMode.DETERMINISTIC)
    y_scheme: str = _solver('Y_SCHEME', 'explicit')
    truncation_tol: float = 1e-6


@dataclass
class AgentsSection:
    n_cells: int = _agents('N_CELLS', 20000)
    dt_agent_s: float = _agents('DT_AGENT_S', 0.0)
    snapshot_every_s: float = _agents('SNAPSHOT_EVERY_S', 100.0)
    dump_agents: bool = _agents('DUMP_AGENTS', False)
    seed: int = _agents('SEED', 20240601)


@dataclass
class StudySection:
    eps_list: List[float] = field(
        default_factory=lambda: list(ConfigManager.get_study_config('EPS_LIST', [0.4, 0.2, 0.1, 0.05]))
    )
    kernel_u_min: float = _study('KERNEL_U_MIN', -5.0)
    kernel_u_max: float = _study('KERNEL_U_MAX', 5.0)
    kernel_points: int = _study('KERNEL_POINTS', 201)


@dataclass
class RunSection:
    output_dir: str = field(default_factory=lambda: str(getattr(settings, 'OUTPUT_DIR', 'runs')))


SECTIONS = {
    'signal': SignalSection,
    'pathway': PathwaySection,
    'grid': GridSection,
    'solver': SolverSection,
    'agents': AgentsSection,
    'study': StudySection,
    'run': RunSection,
}


@dataclass
class RunConfig:
    signal: SignalSection = field(default_factory=SignalSection)
    pathway: PathwaySection = field(default_factory=PathwaySection)
    grid: GridSection = field(default_factory=GridSection)
    solver: SolverSection = field(default_factory=SolverSection)
    agents: AgentsSection = field(default_factory=AgentsSection)
    study: StudySection = field(default_factory=StudySection)
    run: RunSection = field(default_factory=RunSection)

    @property
    def seed(self) -> int:
        return self.agents.seed

    @property
    def output_dir(self) -> Path:
        return Path(self.run.output_dir)

    # ----- builders -----

    def sensing_params(self) -> LogSensingParams:
        s = self.signal
        return LogSensingParams(m0=s.m0, alpha=self.pathway.alpha, K_I=s.K_I_uM, K_A=s.K_A_uM)

    def signal_spec(self) -> SignalSpec:
        s = self.signal
        table_x, table_S = (), ()
        if s.kind == SignalKind.TABULATED:
            table_x, table_S = load_signal_table(s.table_path)
        return SignalSpec(
            kind=s.kind, S0=s.S0_uM, SA=s.SA_uM, wavelength_ell=s.ell_um, wave_speed_u=s.u_um_per_s,
            ramp_rate=s.ramp_rate_per_s, ramp_window=s.ramp_window_s, table_x=table_x, table_S=table_S,
        )

    def signal_field(self) -> SignalField:
        return SignalField(self.signal_spec(), self.sensing_params())

    def pathway_params(self, **changes) -> PathwayParams:
        p = self.pathway
        params = PathwayParams(
            N=p.N, alpha=p.alpha, a0=p.a0, z0=p.z0_per_s, tau=p.tau_s, H=p.H, sigma=p.sigma,
            epsilon=p.epsilon, noise_enabled=p.noise_enabled, quadrature_order=p.quadrature_order,
        )
        return params.replace(**changes) if changes else params

    def full_grid(self) -> FullGrid:
        g = self.grid
        return FullGrid(
            g.nx, self.signal.ell_um, velocity_set(g.v0_um_per_s, g.n_velocities),
            ny=g.ny, y_halfwidth=g.y_halfwidth,
        )

    def velocities(self) -> np.ndarray:
        return velocity_set(self.grid.v0_um_per_s, self.grid.n_velocities)

    # ----- validation -----

    def validate(self) -> 'RunConfig':
        """Check every constraint, raising one ValidationError with all messages"""
        errors = []

        def collect(build):
            try:
                return build()
            except ValidationError as e:
                errors.extend(e.messages)

        signal = collect(self.signal_field)
        pathway = collect(self.pathway_params)
        grid = collect(self.full_grid)

        s = self.solver
        if s.kernel_mode not in KernelMode.values:
            errors.append(f"Unknown kernel mode '{s.kernel_mode}'. Valid modes: {', '.join(KernelMode.values)}.")
        if s.y_scheme not in Y_SCHEMES:
            errors.append(f"Unknown y-scheme '{s.y_scheme}'. Valid schemes: {', '.join(Y_SCHEMES)}.")
        if s.t_end_s <= 0:
            errors.append(f"End time ({s.t_end_s}) must be positive.")
        if s.dt_s < 0 or s.snapshot_every_s < 0:
            errors.append("Time step and snapshot interval must be nonnegative (0 selects the default).")
        if not 0 < s.truncation_tol < 1:
            errors.append(f"Truncation tolerance ({s.truncation_tol}) must lie in (0, 1).")
        if self.agents.n_cells < 1:
            errors.append(f"Agent count ({self.agents.n_cells}) must be positive.")
        if self.agents.dt_agent_s < 0:
            errors.append(f"Agent time step ({self.agents.dt_agent_s}) must be nonnegative.")
        if not 0 <= self.agents.seed < 2 ** 64:
            errors.append(f"Seed ({self.agents.seed}) must be a 64-bit unsigned integer.")
        eps = self.study.eps_list
        if not eps or any(not 0 < e <= 1 for e in eps):
            errors.append(f"Epsilon list {eps} must be nonempty with values in (0, 1].")
        elif any(b >= a for a, b in zip(eps, eps[1:])):
            errors.append(f"Epsilon list {eps} must be strictly decreasing.")
        if self.study.kernel_points < 2 or self.study.kernel_u_max <= self.study.kernel_u_min:
            errors.append("Kernel tabulation needs kernel_u_min < kernel_u_max and at least two points.")

        if signal is not None and signal.spec.kind == SignalKind.UNIFORM_RAMP and s.t_end_s > signal.spec.ramp_window:
            errors.append(f"End time {s.t_end_s} s leaves the ramp window of {signal.spec.ramp_window} s.")

        if grid is not None and s.dt_s > grid.cfl_limit() * (1 + 1e-12):
            errors.append(
                f"Time step {s.dt_s} s violates the upwind CFL condition dt <= 0.9*dx/max|v| = {grid.cfl_limit():.6g} s."
            )
        if grid is not None and signal is not None and pathway is not None:
            u_max = signal.max_pathwise_derivative(grid.velocities)
            try:
                grid.check_coverage(u_max, pathway.G0)
            except ValidationError as e:
                errors.extend(e.messages)
        if pathway is not None and self.agents.dt_agent_s * pathway.lambda_plus > THINNING_BOUND * (1 + 1e-12):
            errors.append(
                f"Agent step {self.agents.dt_agent_s} s violates the thinning bound "
                f"lambda_plus*dt <= {THINNING_BOUND} (lambda_plus = {pathway.lambda_plus:.6g}/s)."
            )

        if errors:
            logger.error(f"Run configuration rejected with {len(errors)} error(s)")
            raise ValidationError(errors)
        return self

    # ----- serialization -----

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    def emit(self, path: Union[str, Path]) -> Path:
        """Write the configuration as JSON readable by parse_config"""
        path = Path(path)
        path.write_text(json.dumps({'config': self.to_dict()}, indent=2, sort_keys=True) + '\n')
        return path


def load_signal_table(path: str):
    """(x, S) samples from a CSV with columns x and S"""
    if not path:
        raise ValidationError("Tabulated signal needs table_path pointing at a CSV with columns x,S.")
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise ValidationError(f"Cannot read signal table '{path}': {e}")
    missing = {'x', 'S'} - set(frame.columns)
    if missing:
        raise ValidationError(f"Signal table '{path}' lacks column(s): {', '.join(sorted(missing))}.")
    return tuple(frame['x'].astype(float)), tuple(frame['S'].astype(float))


def _cast(value: Any, target: Any, name: str) -> Any:
    if target is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in TRUE_VALUES:
            return True
        if text in FALSE_VALUES:
            return False
        raise ValidationError(f"'{name}' expects on/off, got '{value}'.")
    if target == List[float]:
        if isinstance(value, str):
            value = [item for item in value.split(',') if item.strip()]
        return [float(item) for item in value]
    try:
        if target is int:
            number = float(value)
            if not number.is_integer():
                raise ValueError
            return int(number)
        if target is float:
            return float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"'{name}' expects a {target.__name__}, got '{value}'.")
    return str(value).strip()


def _build_section(name: str, values: Dict[str, Any]):
    cls = SECTIONS[name]
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ValidationError(
            f"Unknown key(s) {', '.join(unknown)} in [{name}]. Valid keys: {', '.join(known)}."
        )
    return cls(**{key: _cast(value, known[key].type, f"{name}.{key}") for key, value in values.items()})


def from_dict(data: Dict[str, Dict[str, Any]]) -> RunConfig:
    unknown = sorted(set(data) - set(SECTIONS))
    if unknown:
        raise ValidationError(f"Unknown section(s) {', '.join(unknown)}. Valid sections: {', '.join(SECTIONS)}.")
    errors = []
    sections = {}
    for name in SECTIONS:
        try:
            sections[name] = _build_section(name, data.get(name) or {})
        except ValidationError as e:
            errors.extend(e.messages)
    if errors:
        raise ValidationError(errors)
    return RunConfig(**sections)


def _read_ini(path: Path) -> Dict[str, Dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(path.read_text())
    except configparser.Error as e:
        raise ValidationError(f"Malformed configuration file '{path}': {e}")
    if parser.defaults():
        raise ValidationError(f"Keys outside a section in '{path}'. Valid sections: {', '.join(SECTIONS)}.")
    return {section: dict(parser.items(section)) for section in parser.sections()}


def parse_config(path: Optional[Union[str, Path]] = None, validate: bool = True) -> RunConfig:
    """
    Read a run configuration; no path gives the defaults.

    JSON files may be either a bare section mapping or run metadata holding
    it under 'config'.
    """
    if path is None:
        config = RunConfig()
    else:
        path = Path(path)
        if not path.is_file():
            raise ValidationError(f"Configuration file '{path}' does not exist.")
        if path.suffix.lower() == '.json':
            try:
                data = json.loads(path.read_text())
            except json.JSONDecodeError as e:
                raise ValidationError(f"Malformed JSON in '{path}': {e}")
            data = data.get('config', data)
        else:
            data = _read_ini(path)
        config = from_dict(data)
        logger.info(f"Loaded run configuration from {path}")
    return config.validate() if validate else config


def apply_overrides(config: RunConfig, u: Optional[float] = None, epsilon: Optional[float] = None,
                    noise: Optional[str] = None, seed: Optional[int] = None,
                    output_dir: Optional[str] = None) -> RunConfig:
    """Command-line flags take precedence over the file"""
    signal, pathway, solver, agents, run = config.signal, config.pathway, config.solver, config.agents, config.run
    if u is not None:
        signal = replace(signal, u_um_per_s=float(u))
    if epsilon is not None:
        pathway = replace(pathway, epsilon=float(epsilon))
    if noise is not None:
        enabled = _cast(noise, bool, 'noise')
        pathway = replace(pathway, noise_enabled=enabled)
        solver = replace(solver, kernel_mode=KernelMode.NOISE if enabled else KernelMode.DETERMINISTIC)
    if seed is not None:
        agents = replace(agents, seed=int(seed))
    if output_dir is not None:
        run = replace(run, output_dir=str(output_dir))
    return replace(config, signal=signal, pathway=pathway, solver=solver, agents=agents, run=run)
