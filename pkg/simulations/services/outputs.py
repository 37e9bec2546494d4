"""
Run output directories

CSV tables are written with 17 significant digits and '\\n' line endings so
that identical runs produce identical bytes. A RunOutput used as a context
manager removes everything it wrote when the run fails.
"""
import json
import logging
import shutil
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from django.core.exceptions import ValidationError

from analytics.services.diagnostics import ProfileRecord
from kinetics.services.full_solver import FullKineticState, reconstruct_p
from kinetics.services.grid import FullGrid
from signaling.services.pathway import PathwayParams, g_bounds
from signaling.services.signal_field import SignalField
from .run_config import RunConfig

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
METADATA_FILE = 'metadata.json'
PROFILE_FILE = 'profile_final.csv'
PROFILES_FILE = 'profiles.csv'
COMOVING_FILE = 'profile_comoving.csv'


def write_csv(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return path


def _json_default(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def profiles_frame(records: Sequence[ProfileRecord]) -> pd.DataFrame:
    """Snapshots stacked in long form: t, x, rho, J"""
    frames = [record.to_frame().assign(t=record.t) for record in records]
    return pd.concat(frames, ignore_index=True)[['t', 'x', 'rho', 'J']]


def snapshot_name(stem: str, index: int) -> str:
    return f'{stem}_{index:04d}.csv'


def velocity_marginal_frame(grid: FullGrid, values: np.ndarray, column: str) -> pd.DataFrame:
    """(x-cell, velocity) density in long form: x, v, <column>"""
    return pd.DataFrame({
        'x': np.repeat(grid.x_centers, grid.nv),
        'v': np.tile(grid.velocities, grid.nx),
        column: np.asarray(values, dtype=float).ravel(),
    })


def internal_state_frame(grid: FullGrid, q: np.ndarray) -> pd.DataFrame:
    """Full density in long form: x, v, y, q (y fastest)"""
    nx, nv, ny = grid.shape
    return pd.DataFrame({
        'x': np.repeat(grid.x_centers, nv * ny),
        'v': np.tile(np.repeat(grid.velocities, ny), nx),
        'y': np.tile(grid.y_centers, nx * nv),
        'q': np.asarray(q, dtype=float).ravel(),
    })


def methylation_frame(state: FullKineticState, signal: SignalField) -> pd.DataFrame:
    """Density in methylation at the y-cell centres of every (x-cell, velocity): x, v, m, p"""
    grid = state.grid
    frames = []
    for x in grid.x_centers:
        M = float(signal.methylation(x, state.t))
        m = M + state.epsilon * grid.y_centers
        m = m[m >= 0]
        for v in grid.velocities:
            frames.append(pd.DataFrame({'x': x, 'v': v, 'm': m, 'p': reconstruct_p(state, signal, x, v, m)}))
    return pd.concat(frames, ignore_index=True)


def pathway_bounds(pathway: PathwayParams, y_halfwidth: float) -> Dict[str, float]:
    g_minus, g_plus = g_bounds(pathway, y_halfwidth)
    return {
        'lambda_minus': pathway.lambda_minus,
        'lambda_plus': pathway.lambda_plus,
        'G0': pathway.G0,
        'g_minus': g_minus,
        'g_plus': g_plus,
    }


class RunOutput:
    """
    Output directory of one command.

    Usage:
        with RunOutput(path, command='simulate_full', config=config) as out:
            out.write_frame('profiles.csv', frame)
            out.metadata['mass_drift'] = drift
    """

    def __init__(self, directory: Union[str, Path], command: str, config: Optional[RunConfig] = None):
        self.directory = Path(directory)
        self.command = command
        self.config = config
        self.metadata: Dict[str, Any] = {'command': command}
        self.written: List[Path] = []
        self._created = False
        self._started = None

    def __enter__(self) -> 'RunOutput':
        if self.directory.exists() and not self.directory.is_dir():
            raise ValidationError(f"Output path '{self.directory}' is not a directory.")
        if not self.directory.exists():
            self.directory.mkdir(parents=True)
            self._created = True
        self._started = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.write_metadata()
            logger.info(f"{self.command}: wrote {len(self.written)} file(s) to {self.directory}")
            return False
        logger.error(f"{self.command} failed, removing partial outputs in {self.directory}")
        self.discard()
        return False

    def path(self, name: str) -> Path:
        return self.directory / name

    def write_frame(self, name: str, frame: pd.DataFrame) -> Path:
        path = write_csv(self.path(name), frame)
        self.written.append(path)
        return path

    def write_json(self, name: str, data: Dict[str, Any]) -> Path:
        path = self.path(name)
        path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + '\n')
        self.written.append(path)
        return path

    def write_metadata(self) -> Path:
        if self.config is not None:
            self.metadata['config'] = self.config.to_dict()
        self.metadata['wall_time_s'] = time.perf_counter() - self._started
        return self.write_json(METADATA_FILE, self.metadata)

    def write_snapshot(self, t: float, frames: Dict[str, pd.DataFrame]) -> List[Path]:
        """One numbered file per stem for the snapshot at time t"""
        snapshots = self.metadata.setdefault('snapshots', [])
        index = len(snapshots) + 1
        paths = [self.write_frame(snapshot_name(stem, index), frame) for stem, frame in frames.items()]
        snapshots.append({'t': t, 'files': [path.name for path in paths]})
        return paths

    def write_profiles(self, records: Sequence[ProfileRecord], wave_speed: float = 0.0) -> None:
        """Snapshot trail, final profile and its co-moving view"""
        final = records[-1]
        self.write_frame(PROFILES_FILE, profiles_frame(records))
        self.write_frame(PROFILE_FILE, final.to_frame())
        self.write_frame(COMOVING_FILE, final.comoving_frame(wave_speed))
        self.metadata['profile'] = {
            't': final.t,
            'source': str(final.source),
            'mass': final.mass,
            'domain_length': final.domain_length,
            'nx': final.nx,
        }

    def discard(self) -> None:
        if self._created:
            shutil.rmtree(self.directory, ignore_errors=True)
            return
        for path in self.written + [self.path(METADATA_FILE)]:
            path.unlink(missing_ok=True)


def read_metadata(directory: Union[str, Path]) -> Dict[str, Any]:
    path = Path(directory) / METADATA_FILE
    if not path.is_file():
        raise ValidationError(f"'{directory}' holds no {METADATA_FILE}; not a run directory.")
    return json.loads(path.read_text())


def read_profile(directory: Union[str, Path]) -> ProfileRecord:
    """Final profile written by a simulate command"""
    metadata = read_metadata(directory)
    info = metadata.get('profile')
    path = Path(directory) / PROFILE_FILE
    if info is None or not path.is_file():
        raise ValidationError(f"'{directory}' holds no final profile.")
    frame = pd.read_csv(path)
    return ProfileRecord(
        t=float(info['t']),
        rho=frame['rho'].to_numpy(dtype=float),
        J=frame['J'].to_numpy(dtype=float),
        mass=float(info['mass']),
        source=info['source'],
        domain_length=float(info['domain_length']),
    )
