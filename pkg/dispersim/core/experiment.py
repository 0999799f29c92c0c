"""
Experiment Runner

Parses experiment files (JSON or YAML), builds the model and initial data,
runs the propagation and the requested checks, and writes report.json, one
CSV per time series, optional snapshots and manifest.json.
"""

import csv
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.fft

from . import __version__
from .batch import BatchRunner
from .config import get_config, read_structured_file
from .exceptions import ConfigurationError
from .fieldgrid import (
    AdmissiblePair,
    ComplexField,
    Grid,
    SpinorField,
    WavePacket,
    gaussian_packet,
    list_admissible_pairs,
    make_grid,
    random_band_limited_field,
    random_smooth_field,
    spectral_edge_fraction,
)
from .model import (
    ChargeTransferModel,
    MatrixChargeTransferModel,
    MatrixPotentialSpec,
    PotentialSpec,
    ValidationReport,
    is_commensurate,
    snap_velocity,
    validate_model,
)
from .propagate import Trajectory, evolve, evolve_matrix, lp_observers
from .snapshot import emit_snapshot, load_snapshot
from .spectral import SpectralFamily, matrix_eigenpairs, moving_bound_state, prepare_scattering_state
from .verify import (
    ORTHOGONAL_TOL,
    REFINEMENT_TOLERANCE,
    DecompositionReport,
    EstimateReport,
    asymptotic_decomposition,
    bound_overlap_observer,
    default_stride,
    dispersive_report,
    energy_report,
    kato_smoothing_report,
    matrix_conjugacy_report,
    matrix_stability_report,
    orthogonality_decay_report,
    sobolev_observers,
    strichartz_grid_comparison,
    strichartz_report,
    unitarity_report,
    wave_operator_convergence,
    weighted_curve_report,
    weighted_operator_report,
)

logger = logging.getLogger(__name__)

TOP_LEVEL_KEYS = {'name', 'description', 'seed', 'snap_velocities', 'grid', 'model', 'bound_states',
                  'initial', 'run', 'checks', 'output'}
SCALAR_CHECKS = ('unitarity', 'dispersive', 'weighted_operator', 'weighted_curve', 'strichartz', 'energy',
                 'orthogonality', 'decomposition', 'kato', 'wave_operator')
MATRIX_CHECKS = ('matrix_conjugacy', 'matrix_stability')
TRAJECTORY_CHECKS = ('unitarity', 'dispersive', 'strichartz', 'energy', 'orthogonality', 'decomposition')
NEEDS_FAMILIES = ('weighted_operator', 'orthogonality', 'decomposition', 'wave_operator')
EDGE_FRACTION = 0.8
EDGE_MASS_WARNING = 1e-6
HEADLINES = {
    'unitarity': 'drift_per_unit_time',
    'dispersive': 'exponent',
    'weighted_operator': 'exponent',
    'weighted_curve': 'late_increment_fraction',
    'strichartz': None,
    'energy': 'growth_ratio',
    'orthogonality': 'alpha',
    'decomposition': 'final_residual',
    'kato': 'late_increment_fraction',
    'matrix_conjugacy': 'max_discrepancy',
    'matrix_stability': 'sup_ratio',
    'wave_operator': 'alpha',
}
INITIAL_TYPES = ('packet', 'bound_state', 'file', 'random_smooth', 'random_band_limited')

Report = Union[EstimateReport, DecompositionReport]


@dataclass
class CheckConfig:
    """One requested verification with its parameters and expectations."""

    name: str
    kind: str
    params: Dict[str, Any] = field(default_factory=dict)
    expect: Dict[str, Any] = field(default_factory=dict)
    refine: bool = True


@dataclass
class ExperimentConfig:
    """Validated experiment description."""

    name: str
    grid: Grid
    kind: str
    potentials: Tuple[Any, ...]
    initial: Dict[str, Any]
    t0: float
    t1: float
    dt: float
    stride: int
    store: bool
    checks: List[CheckConfig]
    output: Optional[str]
    snapshots: List[Union[str, float]]
    seed: int = 0
    snap_velocities: bool = False
    bound_states: Dict[str, Any] = field(default_factory=dict)
    adjustments: List[Dict[str, Any]] = field(default_factory=list)
    raw: Dict[str, Any] = field(default_factory=dict)
    base_dir: str = '.'

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()

    def build_model(self) -> Union[ChargeTransferModel, MatrixChargeTransferModel]:
        if self.kind == 'matrix':
            return MatrixChargeTransferModel(self.potentials, self.grid)
        return ChargeTransferModel(self.potentials, self.grid)


@dataclass
class RunManifest:
    """Reproducibility record of one run."""

    config_hash: str
    version: str
    grid: Dict[str, Any]
    dt: float
    adjustments: List[Dict[str, Any]]
    wall_clock: float
    checks: Dict[str, Dict[str, Any]]
    validation: Optional[Dict[str, Any]] = None
    preparation: Optional[Dict[str, Any]] = None
    threads: int = 1
    exit_status: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config_hash': self.config_hash,
            'version': self.version,
            'grid': self.grid,
            'dt': self.dt,
            'adjustments': self.adjustments,
            'wall_clock_seconds': self.wall_clock,
            'checks': self.checks,
            'validation': self.validation,
            'preparation': self.preparation,
            'threads': self.threads,
            'exit_status': self.exit_status,
        }


@dataclass
class RunResult:
    exit_status: int
    reports: Dict[str, Report]
    manifest: RunManifest
    output_dir: Optional[str]


def _require(block: Dict[str, Any], key: str, where: str) -> Any:
    if key not in block:
        raise ConfigurationError(f"Missing '{key}' in {where} block")
    return block[key]


def _mapping(data: Any, where: str) -> Dict[str, Any]:
    if not isinstance(data, dict):
        raise ConfigurationError(f"The {where} block must be a mapping")
    return data


def _snap(spec_data: Dict[str, Any], index: int, grid: Grid, snap: bool,
          adjustments: List[Dict[str, Any]]) -> Dict[str, Any]:
    velocity = spec_data.get('velocity')
    if velocity is None:
        return spec_data
    velocity = [float(x) for x in np.atleast_1d(np.asarray(velocity, dtype=float))]
    if not snap or is_commensurate(velocity, grid.length):
        return spec_data
    snapped = [float(x) for x in snap_velocity(velocity, grid.length)]
    logger.warning("Velocity of potential %d snapped from %s to %s", index, velocity, snapped)
    adjustments.append({'potential': index, 'from': velocity, 'to': snapped})
    return dict(spec_data, velocity=snapped)


def _parse_potentials(model: Dict[str, Any], grid: Grid, snap: bool,
                      adjustments: List[Dict[str, Any]]) -> Tuple[str, Tuple[Any, ...]]:
    kind = model.get('kind', 'scalar')
    if kind not in ('scalar', 'matrix'):
        raise ConfigurationError(f"Model kind must be 'scalar' or 'matrix', got '{kind}'")
    entries = model.get('potentials', [])
    if not isinstance(entries, list):
        raise ConfigurationError("model.potentials must be a list")
    potentials = []
    for i, entry in enumerate(entries):
        entry = _snap(_mapping(entry, f"model.potentials[{i}]"), i, grid, snap, adjustments)
        if kind == 'matrix':
            potentials.append(MatrixPotentialSpec.from_dict(entry))
        else:
            potentials.append(PotentialSpec.from_dict(entry))
    if kind == 'matrix' and len(potentials) != 1:
        raise ConfigurationError("Matrix experiments take exactly one matrix potential")
    return kind, tuple(potentials)


def _parse_checks(entries: Any, kind: str, channels: int) -> List[CheckConfig]:
    if not isinstance(entries, list):
        raise ConfigurationError("checks must be a list")
    allowed = MATRIX_CHECKS if kind == 'matrix' else SCALAR_CHECKS
    checks, names = [], set()
    for i, entry in enumerate(entries):
        entry = dict(_mapping(entry, f"checks[{i}]"))
        check_type = entry.pop('type', None)
        if check_type not in allowed:
            raise ConfigurationError(f"checks[{i}]: type '{check_type}' is not one of {allowed}")
        name = entry.pop('name', check_type)
        if name in names:
            raise ConfigurationError(f"Duplicate check name '{name}'")
        names.add(name)
        expect = _mapping(entry.pop('expect', {}), f"checks[{i}].expect")
        unknown = set(expect) - {'key', 'min', 'max', 'flags'}
        if unknown:
            raise ConfigurationError(f"checks[{i}].expect: unknown fields {sorted(unknown)}")
        if ('min' in expect or 'max' in expect) and expect.get('key', HEADLINES[check_type]) is None:
            raise ConfigurationError(f"checks[{i}].expect needs a 'key' for {check_type}")
        refine = bool(entry.pop('refine', True))
        channel = entry.get('channel')
        if channel is not None and not 0 <= int(channel) < channels:
            raise ConfigurationError(f"checks[{i}]: channel {channel} does not exist")
        checks.append(CheckConfig(name, check_type, entry, expect, refine))
    return checks


def parse_experiment_config(data: Dict[str, Any], base_dir: str = '.') -> ExperimentConfig:
    """
    Validate an experiment mapping.

    Raises:
        ConfigurationError: On the first schema violation
    """
    data = _mapping(data, 'top-level')
    unknown = set(data) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigurationError(f"Unknown top-level fields: {sorted(unknown)}")

    grid_block = _mapping(_require(data, 'grid', 'top-level'), 'grid')
    grid = make_grid(int(_require(grid_block, 'n', 'grid')), int(_require(grid_block, 'N', 'grid')),
                     float(_require(grid_block, 'L', 'grid')))

    snap = bool(data.get('snap_velocities', False))
    adjustments: List[Dict[str, Any]] = []
    kind, potentials = _parse_potentials(_mapping(data.get('model', {}), 'model'), grid, snap, adjustments)

    run = _mapping(_require(data, 'run', 'top-level'), 'run')
    t0 = float(run.get('t0', 0.0))
    t1 = float(_require(run, 't1', 'run'))
    dt = float(run.get('dt', get_config().get('default_dt')))
    if not dt > 0:
        raise ConfigurationError(f"run.dt must be positive, got {dt}")
    if not t1 > t0:
        raise ConfigurationError(f"run.t1 must exceed run.t0, got [{t0}, {t1}]")
    steps = (t1 - t0) / dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigurationError(f"Run length {t1 - t0} is not a multiple of dt = {dt}")
    steps = int(round(steps))
    stride = int(run.get('stride', default_stride(steps)))
    if stride < 1 or steps % stride:
        raise ConfigurationError(f"run.stride = {stride} must divide the {steps} steps")

    initial = _mapping(_require(data, 'initial', 'top-level'), 'initial')
    initial_type = initial.get('type', 'packet')
    if initial_type not in INITIAL_TYPES:
        raise ConfigurationError(f"initial.type must be one of {INITIAL_TYPES}, got '{initial_type}'")
    if initial_type == 'bound_state':
        channel = int(initial.get('channel', 0))
        if kind != 'scalar' or not 0 <= channel < len(potentials):
            raise ConfigurationError(f"initial.channel {channel} does not name a scalar channel")
    if initial.get('prepare', False) and t0 != 0.0:
        raise ConfigurationError("Scattering preparation is defined at t0 = 0")

    checks = _parse_checks(data.get('checks', []), kind, len(potentials))
    store = bool(run.get('store', False)) or any(c.kind == 'decomposition' for c in checks)

    output = _mapping(data.get('output', {}), 'output')
    snapshots = output.get('snapshots', [])
    if not isinstance(snapshots, list):
        raise ConfigurationError("output.snapshots must be a list")
    for entry in snapshots:
        if entry in ('initial', 'final'):
            continue
        if not isinstance(entry, (int, float)):
            raise ConfigurationError(f"Snapshot entry {entry!r} must be 'initial', 'final' or a time")
        if not store:
            raise ConfigurationError("Snapshots at intermediate times need run.store = true")

    bound_block = _mapping(data.get('bound_states', {}), 'bound_states')

    return ExperimentConfig(
        name=str(data.get('name', 'experiment')),
        grid=grid,
        kind=kind,
        potentials=potentials,
        initial=initial,
        t0=t0,
        t1=t1,
        dt=dt,
        stride=stride,
        store=store,
        checks=checks,
        output=output.get('directory'),
        snapshots=snapshots,
        seed=int(data.get('seed', 0)),
        snap_velocities=snap,
        bound_states=bound_block,
        adjustments=adjustments,
        raw=data,
        base_dir=base_dir,
    )


def load_experiment_config(path: str) -> ExperimentConfig:
    """Read and validate an experiment file (JSON or YAML)."""
    if not os.path.exists(path):
        raise ConfigurationError(f"Experiment file not found: {path}")
    data = read_structured_file(path)
    return parse_experiment_config(data, base_dir=os.path.dirname(os.path.abspath(path)))


def _packet(block: Dict[str, Any]) -> WavePacket:
    return WavePacket(center=tuple(np.atleast_1d(block.get('center', ()))),
                      momentum=tuple(np.atleast_1d(block.get('momentum', ()))),
                      width=float(block.get('width', 1.0)),
                      band_limit=float(block['band_limit']) if 'band_limit' in block else None)


def build_initial(config: ExperimentConfig, model, families: Sequence[SpectralFamily],
                  rng: np.random.Generator) -> Tuple[Union[ComplexField, SpinorField], Optional[Dict[str, Any]]]:
    """
    Initial data and, for prepared packets, the preparation diagnostics.
    """
    block = config.initial
    grid = config.grid
    initial_type = block.get('type', 'packet')

    if initial_type == 'file':
        path = _require(block, 'path', 'initial')
        if not os.path.isabs(path):
            path = os.path.join(config.base_dir, path)
        f = load_snapshot(path, grid)
        if isinstance(f, SpinorField) != (config.kind == 'matrix'):
            raise ConfigurationError(f"Snapshot {path} does not match a {config.kind} model")
        return f, None

    if config.kind == 'matrix':
        if initial_type == 'random_band_limited':
            cutoff = float(block.get('cutoff', 0.5))
            first = random_band_limited_field(grid, rng, cutoff)
            second = random_band_limited_field(grid, rng, cutoff)
        elif initial_type == 'random_smooth':
            first = random_smooth_field(grid, rng, block.get('center'), float(block.get('width', 1.5)))
            second = random_smooth_field(grid, rng, block.get('center'), float(block.get('width', 1.5)))
        elif initial_type == 'packet':
            first = gaussian_packet(grid, _packet(block))
            second = first if block.get('components', 'first') == 'both' else ComplexField.zeros(grid)
        else:
            raise ConfigurationError(f"initial.type '{initial_type}' is not available for matrix models")
        s = SpinorField(first, second)
        return s * (1.0 / s.norm()), None

    if initial_type == 'bound_state':
        channel = int(block.get('channel', 0))
        index = int(block.get('index', 0))
        family = families[channel]
        if index >= len(family):
            raise ConfigurationError(f"Channel {channel} has {len(family)} bound states, index {index} requested")
        v = model.potentials[channel].velocity_on(grid)
        return moving_bound_state(family.states[index], v, config.t0), None

    if initial_type == 'random_smooth':
        f = random_smooth_field(grid, rng, block.get('center'), float(block.get('width', 1.5)))
    elif initial_type == 'random_band_limited':
        f = random_band_limited_field(grid, rng, float(block.get('cutoff', 0.5)))
    else:
        f = gaussian_packet(grid, _packet(block))

    if block.get('prepare', False) and families:
        horizon = block.get('horizon')
        preparation = prepare_scattering_state(f, model, families,
                                               horizon=float(horizon) if horizon is not None else None,
                                               dt=config.dt)
        return preparation.field, preparation.to_dict()
    return f, None


def _observers(config: ExperimentConfig, model, families: Sequence[SpectralFamily]) -> Dict[str, Any]:
    observers: Dict[str, Any] = {}
    for check in config.checks:
        if check.kind == 'dispersive':
            observers.update(lp_observers([math.inf]))
        elif check.kind == 'strichartz':
            observers.update(lp_observers([pair.q for pair in _pairs(check, config.grid)]))
        elif check.kind == 'energy':
            observers.update(sobolev_observers([int(check.params.get('k', 1))]))
        elif check.kind == 'orthogonality':
            observers.update(bound_overlap_observer(model, families))
    return observers


def _pairs(check: CheckConfig, grid: Grid) -> List[AdmissiblePair]:
    if 'pairs' in check.params:
        return [AdmissiblePair(p, q, grid.dimension) for p, q in check.params['pairs']]
    return list_admissible_pairs(grid.dimension, int(check.params.get('count', 3)))


def _companion(config: ExperimentConfig, model, psi0, observers) -> Optional[Trajectory]:
    """Run at 2*dt for refinement consistency, when the step count allows it."""
    steps = int(round(config.duration / config.dt))
    if steps % 2:
        logger.info("No 2*dt companion run: %d steps is odd", steps)
        return None
    stride = config.stride // 2 if config.stride % 2 == 0 else config.stride
    if (steps // 2) % stride:
        stride = 1
    return evolve(model, psi0, config.t0, config.t1, 2 * config.dt, stride=stride, store=False,
                  observers=observers)


def _stationary_channel(config: ExperimentConfig, check: CheckConfig,
                        families: Sequence[SpectralFamily]) -> Tuple[ChargeTransferModel, List[SpectralFamily]]:
    channel = int(check.params['channel'])
    spec = config.potentials[channel].stationary()
    family = SpectralFamily(0, families[channel].states) if families else SpectralFamily(0, ())
    return ChargeTransferModel((spec,), config.grid), [family]


def run_check(check: CheckConfig, config: ExperimentConfig, model, psi0, families: Sequence[SpectralFamily],
              trajectory: Optional[Trajectory], companion: Optional[Trajectory],
              batch: BatchRunner) -> Report:
    """Evaluate one configured check."""
    params = check.params
    grid = config.grid
    T = float(params.get('T', config.duration))
    dt = float(params.get('dt', config.dt))
    kind = check.kind

    if kind == 'unitarity':
        return unitarity_report(trajectory, float(params.get('tolerance', 1e-6)))
    if kind == 'dispersive':
        return dispersive_report(model, psi0, config.duration, config.dt, t_min=params.get('t_min'),
                                 refine=check.refine, trajectory=trajectory, t0=config.t0)
    if kind == 'strichartz':
        report = strichartz_report(trajectory, _pairs(check, grid), reference=companion if check.refine else None)
        if 'compare_points' in params:
            packet = _packet(params.get('packet', config.initial))
            comparison = strichartz_grid_comparison(model, grid, packet, _pairs(check, grid), T, dt,
                                                    int(params['compare_points']))
            report.values.update(comparison)
            if comparison['grid_delta'] > REFINEMENT_TOLERANCE:
                report.flags.append('unconverged')
        return report
    if kind == 'energy':
        return energy_report(trajectory, int(params.get('k', 1)), reference=companion if check.refine else None)
    if kind == 'orthogonality':
        return orthogonality_decay_report(model, trajectory, families,
                                          tolerance=float(params.get('tolerance', ORTHOGONAL_TOL)))
    if kind == 'decomposition':
        return asymptotic_decomposition(model, trajectory, families)
    if kind == 'weighted_operator':
        target, target_families = model, families
        if 'channel' in params:
            target, target_families = _stationary_channel(config, check, families)
        return weighted_operator_report(target, grid, params.get('x0'), params.get('x1'),
                                        float(_require(params, 'sigma', check.name)), T, dt,
                                        families=target_families, trials=int(params.get('trials', 3)),
                                        seed=config.seed, t_min=params.get('t_min'), refine=check.refine)
    if kind == 'weighted_curve':
        velocity = params.get('velocity')
        if velocity is None and 'channel' in params:
            velocity = list(config.potentials[int(params['channel'])].velocity_on(grid))
        return weighted_curve_report(model, psi0, params.get('curve', 'origin'),
                                     float(_require(params, 'sigma', check.name)), T, dt,
                                     velocity=velocity, seed=config.seed, refine=check.refine)
    if kind == 'kato':
        u = gaussian_packet(grid, _packet(params['packet'])) if 'packet' in params else psi0
        return kato_smoothing_report(u, float(params.get('sigma', 1.0)), T, float(params.get('dt', 0.05)),
                                     refine=check.refine)
    if kind == 'wave_operator':
        channel = int(params.get('channel', 0))
        family = families[channel]
        state = family.states[int(params.get('state', 0))]
        starts = [float(s) for s in _require(params, 'starts', check.name)]
        horizon = float(_require(params, 'horizon', check.name))
        return wave_operator_convergence(model, channel, state, starts, horizon, dt, runner=batch)
    spec = config.potentials[int(params.get('channel', 0))]
    if kind == 'matrix_conjugacy':
        return matrix_conjugacy_report(spec, psi0, T, dt, float(params.get('tolerance', 1e-6)))
    if kind == 'matrix_stability':
        pairs = matrix_eigenpairs(spec.stationary(), grid)
        return matrix_stability_report(spec.stationary(), pairs, psi0, T, dt, refine=check.refine)
    raise ConfigurationError(f"Unknown check type '{kind}'")


def _lookup(values: Dict[str, Any], key: str) -> Any:
    current: Any = values
    for part in key.split('.'):
        if not isinstance(current, dict) or part not in current:
            raise ConfigurationError(f"Report has no value '{key}'")
        current = current[part]
    return current


def evaluate_expectations(check: CheckConfig, report: Report) -> List[str]:
    """
    Hard flags of a check after applying its expect block: expected flags
    are not failures, missing expected flags and out-of-range values are.
    """
    expect = check.expect
    expected_flags = set(expect.get('flags', []))
    hard = [flag for flag in report.hard_flags if flag not in expected_flags]
    missing = expected_flags - set(report.flags)
    if missing:
        hard.append('expected_flag_missing')
        logger.warning("Check %s: expected flags %s were not raised", check.name, sorted(missing))
    if 'min' in expect or 'max' in expect:
        key = expect.get('key', HEADLINES[check.kind])
        value = _lookup(report.to_dict()['values'], key)
        if value is None or ('min' in expect and value < float(expect['min'])) \
                or ('max' in expect and value > float(expect['max'])):
            hard.append('expectation_failed')
            logger.warning("Check %s: %s = %s outside [%s, %s]", check.name, key, value,
                           expect.get('min', '-inf'), expect.get('max', 'inf'))
    return hard


def _write_csv(path: str, series: Dict[str, List[float]]) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(['t', 'value', 'boundary_shell_mass'])
        for row in zip(series['t'], series['value'], series['boundary_shell_mass']):
            writer.writerow([repr(float(x)) for x in row])


def _report_series(report: Report) -> Dict[str, Dict[str, List[float]]]:
    if isinstance(report, DecompositionReport):
        shell = [0.0] * len(report.residual_times)
        return {
            'residual': {'t': list(report.residual_times), 'value': list(report.residual_norms),
                         'boundary_shell_mass': shell},
            'residual_alternate_sign': {'t': list(report.residual_times),
                                        'value': list(report.alternate_residual_norms),
                                        'boundary_shell_mass': shell},
        }
    return report.series


def write_outputs(out_dir: str, reports: Dict[str, Report], manifest: RunManifest,
                  trajectory: Optional[Trajectory]) -> None:
    """Write report.json, the CSV series and manifest.json."""
    os.makedirs(out_dir, exist_ok=True)
    payload = {name: report.to_dict() for name, report in reports.items()}
    with open(os.path.join(out_dir, 'report.json'), 'w', encoding='utf-8') as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
    for name, report in reports.items():
        for series_name, series in _report_series(report).items():
            _write_csv(os.path.join(out_dir, f"{name}_{series_name}.csv"), series)
    if trajectory is not None:
        _write_csv(os.path.join(out_dir, 'trajectory_l2_norm.csv'),
                   {'t': list(trajectory.times), 'value': list(trajectory.norms),
                    'boundary_shell_mass': list(trajectory.shell_mass)})
    with open(os.path.join(out_dir, 'manifest.json'), 'w', encoding='utf-8') as handle:
        json.dump(manifest.to_dict(), handle, indent=2, sort_keys=True)


def _emit_snapshots(config: ExperimentConfig, out_dir: str, psi0, trajectory: Optional[Trajectory]) -> List[str]:
    written = []
    for entry in config.snapshots:
        if entry == 'initial':
            f, label = psi0, 'initial'
        elif entry == 'final':
            if trajectory is None:
                continue
            f, label = trajectory.final, 'final'
        else:
            index = int(np.argmin(np.abs(trajectory.times - float(entry))))
            f, label = trajectory.snapshots[index], f"t{trajectory.times[index]:.6g}"
        path = os.path.join(out_dir, 'snapshots', f"{label}.dspf")
        emit_snapshot(f, path)
        written.append(path)
    return written


def run_experiment(config_path: str, out_dir: Optional[str] = None, threads: Optional[int] = None,
                   dry_run: bool = False, progress: bool = False) -> RunResult:
    """
    Execute an experiment file.

    Args:
        config_path: Experiment file (JSON or YAML)
        out_dir: Output directory overriding the file's output block
        threads: Requested FFT / batch worker count (DISPERSIM_THREADS wins)
        dry_run: Validate and plan without propagating or writing files
        progress: Show progress bars

    Returns:
        RunResult; exit_status is 0 iff no check is hard-flagged

    Raises:
        ConfigurationError: On schema or model validation failure
        PropagationError: On non-finite values or matrix instability
    """
    started = time.perf_counter()
    settings = get_config()
    progress = progress or bool(settings.get('show_progress'))
    config = load_experiment_config(config_path)
    workers = settings.resolve_threads(threads)
    model = config.build_model()
    validation: Optional[ValidationReport] = validate_model(model) if config.potentials else None

    if out_dir is None:
        out_dir = (os.path.join(config.base_dir, config.output) if config.output
                   else os.path.join(settings.get('output_directory'), config.name))

    manifest = RunManifest(
        config_hash=config.config_hash,
        version=__version__,
        grid={'n': config.grid.dimension, 'N': config.grid.points, 'L': config.grid.length},
        dt=config.dt,
        adjustments=config.adjustments,
        wall_clock=0.0,
        checks={check.name: {'type': check.kind} for check in config.checks},
        validation=validation.to_dict() if validation else None,
        threads=workers,
    )
    if dry_run:
        manifest.wall_clock = time.perf_counter() - started
        logger.info("Dry run of %s: %d checks planned", config.name, len(config.checks))
        return RunResult(0, {}, manifest, None)

    batch = BatchRunner(max_workers=workers)
    rng = np.random.default_rng(config.seed)
    with scipy.fft.set_workers(workers):
        families: List[SpectralFamily] = []
        needs_families = config.kind == 'scalar' and config.potentials and (
            config.initial.get('type') == 'bound_state' or config.initial.get('prepare', False)
            or any(check.kind in NEEDS_FAMILIES for check in config.checks)
        )
        if needs_families:
            block = config.bound_states
            families = batch.solve_families(
                model, k_max=int(block.get('k_max', 2)), tol=float(block.get('tol', settings.get('bound_state_tol'))),
                gap_tol=float(block.get('gap_tol', settings.get('gap_tol'))), seed=config.seed,
            )
            for family in families:
                logger.info("Channel %d eigenvalues: %s", family.channel, family.eigenvalues)

        psi0, preparation = build_initial(config, model, families, rng)
        manifest.preparation = preparation
        edge = spectral_edge_fraction(psi0, EDGE_FRACTION)
        if edge > EDGE_MASS_WARNING:
            logger.warning("Initial data carry %.1e of their mass above %.1f xi_max; "
                           "boundary contamination can set in early", edge, EDGE_FRACTION)

        trajectory: Optional[Trajectory] = None
        companion: Optional[Trajectory] = None
        wants_trajectory = any(check.kind in TRAJECTORY_CHECKS for check in config.checks) or any(
            entry != 'initial' for entry in config.snapshots)
        if wants_trajectory:
            observers = _observers(config, model, families)
            if config.kind == 'matrix':
                trajectory = evolve_matrix(model, psi0, config.t0, config.t1, config.dt, stride=config.stride,
                                           store=config.store, progress=progress)
            else:
                trajectory = evolve(model, psi0, config.t0, config.t1, config.dt, stride=config.stride,
                                    store=config.store, observers=observers, progress=progress)
                if any(check.refine and check.kind in ('strichartz', 'energy') for check in config.checks):
                    companion = _companion(config, model, psi0, observers)

        reports: Dict[str, Report] = {}
        exit_status = 0
        for check in config.checks:
            logger.info("Running check %s (%s)", check.name, check.kind)
            report = run_check(check, config, model, psi0, families, trajectory, companion, batch)
            hard = evaluate_expectations(check, report)
            reports[check.name] = report
            manifest.checks[check.name].update({'flags': list(report.flags), 'hard_flags': hard,
                                                'passed': not hard})
            if hard:
                exit_status = 1

    manifest.exit_status = exit_status
    manifest.wall_clock = time.perf_counter() - started
    write_outputs(out_dir, reports, manifest, trajectory)
    snapshots = _emit_snapshots(config, out_dir, psi0, trajectory)
    logger.info("Wrote %d snapshots to %s", len(snapshots), out_dir)
    return RunResult(exit_status, reports, manifest, out_dir)
