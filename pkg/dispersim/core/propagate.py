"""
Time Propagation

Exact free flow, Strang split-step propagation for stationary and moving
scalar wells, and the two-component non-self-adjoint matrix flow.

All flows solve d/dt psi = -i H(t) psi; the free flow is the Fourier
multiplier exp(-i t |xi|^2 / 2).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

import numpy as np
from tqdm import tqdm

from .exceptions import ConfigurationError, ContractError, InsufficientDataError, InstabilityError, PropagationError
from .fieldgrid import ComplexField, Field, Grid, SpinorField, apply_multiplier, lp_norm
from .model import (
    AnyModel,
    ChargeTransferModel,
    MatrixChargeTransferModel,
    MatrixPotentialSpec,
    PotentialSpec,
    wrap_horizon,
)

logger = logging.getLogger(__name__)

FINITE_CHECK_INTERVAL = 100
INSTABILITY_GROWTH = 1e6
SHELL_THRESHOLD = 1e-6

Observer = Callable[[Field, float], float]


def shell_mass_fraction(f: Field) -> float:
    """Fraction of |psi|^2 within L/10 of the box boundary."""
    density = np.abs(f.values) ** 2
    if isinstance(f, SpinorField):
        density = density.sum(axis=0)
    total = float(density.sum())
    if total == 0.0:
        return 0.0
    return float(density[f.grid.shell_mask].sum()) / total


def lp_observers(exponents) -> Dict[str, Observer]:
    """Observers recording ||psi(t)||_q for each q, keyed 'lp:<q>'."""
    return {f"lp:{float(q):g}": (lambda f, t, q=q: lp_norm(f, q)) for q in exponents}


@dataclass
class Trajectory:
    """
    Snapshots of a propagation at uniformly spaced times, with per-snapshot
    L^2 norm and boundary-shell mass. With store=False only the observer
    series, the diagnostics and the final state are kept.
    """

    grid: Grid
    times: np.ndarray
    snapshots: List[Field]
    norms: np.ndarray
    shell_mass: np.ndarray
    dt: float
    model: Optional[object] = None
    series: Dict[str, np.ndarray] = field(default_factory=dict)
    final: Optional[Field] = None

    @property
    def stored(self) -> bool:
        return len(self.snapshots) == len(self.times)

    @property
    def initial(self) -> Field:
        if not self.snapshots:
            raise InsufficientDataError("Trajectory holds no snapshots")
        return self.snapshots[0]

    def clean_count(self, threshold: float = SHELL_THRESHOLD) -> int:
        """Number of leading snapshots whose shell mass stays below threshold."""
        dirty = np.nonzero(self.shell_mass > threshold)[0]
        return int(dirty[0]) if dirty.size else len(self.times)

    def clean_end(self, threshold: float = SHELL_THRESHOLD) -> float:
        """
        Time of the last contamination-free snapshot.

        Raises:
            InsufficientDataError: If even the first snapshot is contaminated
        """
        count = self.clean_count(threshold)
        if count == 0:
            raise InsufficientDataError("No contamination-free snapshot in trajectory")
        return float(self.times[count - 1])

    def norm_series(self, q) -> np.ndarray:
        """||psi(t)||_q at every snapshot, from snapshots or a recorded observer."""
        key = f"lp:{float(q):g}"
        if key in self.series:
            return np.asarray(self.series[key])
        if float(q) == 2.0:
            return np.asarray(self.norms)
        if not self.stored:
            raise InsufficientDataError(
                f"Trajectory was run without snapshots and without an observer for q = {q}"
            )
        return np.array([lp_norm(s, q) for s in self.snapshots])

    def observe(self, function: Observer) -> np.ndarray:
        if not self.stored:
            raise InsufficientDataError("Trajectory was run without snapshots")
        return np.array([function(s, t) for s, t in zip(self.snapshots, self.times)])


def free_multiplier(grid: Grid, t: float) -> np.ndarray:
    return np.exp(-0.5j * t * grid.frequency_squared)


def free_evolve(f: ComplexField, t: float) -> ComplexField:
    """
    Exact free flow exp(-i t |xi|^2 / 2).

    Args:
        f: Initial field
        t: Duration (any sign)

    Returns:
        Evolved field
    """
    if t == 0:
        return f.with_values(f.values.copy())
    return f.with_values(apply_multiplier(f.values, free_multiplier(f.grid, t), f.grid))


def _check_step(dt: float) -> None:
    if not dt > 0:
        raise ConfigurationError(f"Time step must be positive, got {dt}")


def _substeps(duration: float, dt: float) -> int:
    """Number of equal steps no longer than dt covering |duration|."""
    return max(1, int(math.ceil(abs(duration) / dt - 1e-9)))


def _step_count(t0: float, t1: float, dt: float) -> int:
    _check_step(dt)
    ratio = (t1 - t0) / dt
    steps = int(round(ratio))
    if abs(ratio - steps) > 1e-6 * max(1.0, abs(ratio)):
        raise ConfigurationError(
            f"Interval [{t0}, {t1}] is not an integral number of steps dt = {dt}"
        )
    return steps


def _check_finite(values: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(values)):
        raise PropagationError(f"Non-finite values after step {step}", step=step)


def _run(grid: Grid, values: np.ndarray, advance: Callable[[np.ndarray, float, int], np.ndarray],
         make_field: Callable[[np.ndarray], Field], t0: float, dt: float, steps: int, stride: int,
         store: bool, observers: Optional[Dict[str, Observer]], progress: bool, model,
         growth_limit: Optional[float] = None) -> Trajectory:
    if stride < 1 or steps % stride != 0:
        raise ConfigurationError(f"Stride {stride} must divide the step count {steps}")
    observers = observers or {}
    times, snapshots, norms, shells = [], [], [], []
    series: Dict[str, List[float]] = {name: [] for name in observers}

    def record(current: np.ndarray, t: float, step: int) -> Field:
        _check_finite(current, step)
        snap = make_field(current)
        norm = lp_norm(snap, 2)
        times.append(t)
        norms.append(norm)
        shells.append(shell_mass_fraction(snap))
        for name, function in observers.items():
            series[name].append(function(snap, t))
        if store:
            snapshots.append(snap)
        return snap

    last = record(values, t0, 0)
    reference = norms[0]
    with tqdm(total=steps, desc="Propagating", disable=not progress, leave=False) as bar:
        for k in range(steps):
            values = advance(values, t0 + k * dt, k)
            if (k + 1) % FINITE_CHECK_INTERVAL == 0:
                _check_finite(values, k + 1)
            if (k + 1) % stride == 0:
                last = record(values, t0 + (k + 1) * dt, k + 1)
                if growth_limit is not None and reference > 0 and norms[-1] > growth_limit * reference:
                    raise InstabilityError(
                        f"Norm grew by {norms[-1] / reference:.3g} at step {k + 1}", step=k + 1
                    )
            bar.update(1)

    return Trajectory(
        grid=grid,
        times=np.asarray(times),
        snapshots=snapshots,
        norms=np.asarray(norms),
        shell_mass=np.asarray(shells),
        dt=dt,
        model=model,
        series={name: np.asarray(v) for name, v in series.items()},
        final=last,
    )


def _scalar_stepper(model: ChargeTransferModel, dt: float) -> Callable[[np.ndarray, float, int], np.ndarray]:
    """Strang step with the potential evaluated at the step midpoint."""
    grid = model.grid
    kinetic = free_multiplier(grid, dt)
    moving = any(np.any(v) for v in model.velocities)
    frozen = None if moving else np.exp(-0.5j * dt * model.potential_values(0.0))

    def advance(values: np.ndarray, t: float, _k: int) -> np.ndarray:
        half = frozen if frozen is not None else np.exp(-0.5j * dt * model.potential_values(t + 0.5 * dt))
        values = half * values
        values = apply_multiplier(values, kinetic, grid)
        return half * values

    return advance


def evolve(model: ChargeTransferModel, f: ComplexField, t0: float, t1: float, dt: float,
           stride: int = 1, store: bool = True, observers: Optional[Dict[str, Observer]] = None,
           progress: bool = False) -> Trajectory:
    """
    Propagate under the moving wells with Strang splitting.

    Args:
        model: Scalar charge transfer model
        f: Initial field at time t0
        t0: Start time
        t1: End time (t1 >= t0)
        dt: Time step
        stride: Steps between stored snapshots
        store: Keep every snapshot in memory
        observers: Scalar functions evaluated at each snapshot
        progress: Show a progress bar

    Returns:
        Trajectory with diagnostics

    Raises:
        ConfigurationError: If the interval or stride is inconsistent with dt
        PropagationError: If non-finite values appear
    """
    model.grid.check_same(f.grid)
    if t1 < t0:
        raise ConfigurationError("evolve runs forward in time; use propagate_to for t1 < t0")
    steps = _step_count(t0, t1, dt)
    horizon = wrap_horizon(model)
    if t1 > horizon:
        logger.warning("Run to t = %.4g exceeds the wrap-safe horizon %.4g", t1, horizon)

    if model.is_free:
        initial = f.values
        base = t0

        def advance(values: np.ndarray, t: float, k: int) -> np.ndarray:
            if (k + 1) % stride:
                return values
            return apply_multiplier(initial, free_multiplier(model.grid, t + dt - base), model.grid)
    else:
        advance = _scalar_stepper(model, dt)

    logger.debug("Scalar propagation: %d steps of %.3g on %s", steps, dt, model.grid)
    return _run(model.grid, f.values, advance, f.with_values, t0, dt, steps, stride,
                store, observers, progress, model)


def propagate_to(model: ChargeTransferModel, f: ComplexField, t0: float, t1: float, dt: float) -> ComplexField:
    """
    Final state only; backward in time when t1 < t0 (steps are exact inverses
    of the forward steps).
    """
    _check_step(dt)
    if t1 == t0:
        return f.with_values(f.values.copy())
    if model.is_free:
        return free_evolve(f, t1 - t0)
    steps = _substeps(t1 - t0, dt)
    step = (t1 - t0) / steps
    grid = model.grid
    kinetic = free_multiplier(grid, step)
    values = f.values
    for k in range(steps):
        t_mid = t0 + (k + 0.5) * step
        half = np.exp(-0.5j * step * model.potential_values(t_mid))
        values = half * apply_multiplier(half * values, kinetic, grid)
        if (k + 1) % FINITE_CHECK_INTERVAL == 0:
            _check_finite(values, k + 1)
    _check_finite(values, steps)
    return f.with_values(values)


def evolve_stationary(spec: PotentialSpec, f: ComplexField, t: float, dt: float) -> ComplexField:
    """
    Realize exp(-i t H) for the frozen well (velocity ignored).

    The step is shrunk so that an integral number of steps covers t.
    """
    _check_step(dt)
    if spec.depth == 0.0 or t == 0:
        return free_evolve(f, t)
    grid = f.grid
    steps = _substeps(t, dt)
    step = t / steps
    kinetic = free_multiplier(grid, step)
    half = np.exp(-0.5j * step * spec.stationary().values(grid))
    values = f.values
    for k in range(steps):
        values = half * apply_multiplier(half * values, kinetic, grid)
    _check_finite(values, steps)
    return f.with_values(values)


def pointwise_matrix_exp(m: np.ndarray, dt: float) -> np.ndarray:
    """
    exp(-i dt m) for trace-free 2x2 matrices m = [[a, b], [c, -a]].

    Uses cos(z) Id - i dt sin(z)/z m with z = s dt, s^2 = a^2 + bc; both
    factors are even in s so the branch of the square root does not matter.

    Args:
        m: Array of shape (..., 2, 2)
        dt: Step

    Returns:
        Array of the same shape

    Raises:
        ContractError: If m is not trace-free or not 2x2
    """
    m = np.asarray(m, dtype=complex)
    if m.shape[-2:] != (2, 2):
        raise ContractError(f"Expected 2x2 matrices, got shape {m.shape}")
    trace = m[..., 0, 0] + m[..., 1, 1]
    scale = 1.0 + np.abs(m).max(axis=(-2, -1))
    if np.any(np.abs(trace) > 1e-12 * scale):
        raise ContractError("Matrix exponential requires trace-free input")
    a = m[..., 0, 0]
    s = np.sqrt(a * a + m[..., 0, 1] * m[..., 1, 0])
    z = s * dt
    cosine = np.cos(z)
    sinc = np.sinc(z / np.pi)
    out = (-1j * dt * sinc)[..., None, None] * m
    out[..., 0, 0] += cosine
    out[..., 1, 1] += cosine
    return out


def _apply_pointwise(matrices: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Apply (*grid, 2, 2) matrices to stacked (2, *grid) spinor values."""
    vectors = np.moveaxis(values, 0, -1)
    return np.moveaxis(np.einsum('...ij,...j->...i', matrices, vectors), -1, 0)


def _spinor_kinetic(grid: Grid, dt: float, shift: float = 0.0) -> np.ndarray:
    energy = 0.5 * grid.frequency_squared + shift
    return np.stack([np.exp(-1j * dt * energy), np.exp(1j * dt * energy)])


def _matrix_stepper(model: MatrixChargeTransferModel, dt: float):
    grid = model.grid
    kinetic = _spinor_kinetic(grid, dt)

    def advance(values: np.ndarray, t: float, _k: int) -> np.ndarray:
        half = pointwise_matrix_exp(model.potential_matrix(t + 0.5 * dt), 0.5 * dt)
        values = _apply_pointwise(half, values)
        values = apply_multiplier(values, kinetic, grid)
        return _apply_pointwise(half, values)

    return advance


def stationary_matrix(spec: MatrixPotentialSpec, grid: Grid) -> np.ndarray:
    """The potential part [[U, -W], [W, -U]] of the stationary operator A."""
    u = spec.u_values(grid)
    w = spec.w_values(grid)
    out = np.empty(grid.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = u
    out[..., 0, 1] = -w
    out[..., 1, 0] = w
    out[..., 1, 1] = -u
    return out


def _stationary_matrix_stepper(spec: MatrixPotentialSpec, grid: Grid, dt: float):
    kinetic = _spinor_kinetic(grid, dt, spec.threshold)
    half = pointwise_matrix_exp(stationary_matrix(spec, grid), 0.5 * dt)

    def advance(values: np.ndarray, _t: float, _k: int) -> np.ndarray:
        values = _apply_pointwise(half, values)
        values = apply_multiplier(values, kinetic, grid)
        return _apply_pointwise(half, values)

    return advance


def _spinor_maker(grid: Grid):
    return lambda values: SpinorField.from_array(grid, values)


def evolve_matrix(model: MatrixChargeTransferModel, s: SpinorField, t0: float, t1: float, dt: float,
                  stride: int = 1, store: bool = True, observers: Optional[Dict[str, Observer]] = None,
                  progress: bool = False) -> Trajectory:
    """
    Propagate the matrix system with kinetic part diag(-Delta/2, Delta/2).

    The norm is not conserved; its history is recorded and growth beyond
    1e6 times the initial norm raises InstabilityError.
    """
    model.grid.check_same(s.grid)
    if t1 < t0:
        raise ConfigurationError("evolve_matrix runs forward in time")
    steps = _step_count(t0, t1, dt)
    return _run(model.grid, s.values, _matrix_stepper(model, dt), _spinor_maker(model.grid),
                t0, dt, steps, stride, store, observers, progress, model,
                growth_limit=INSTABILITY_GROWTH)


def matrix_stationary_trajectory(spec: MatrixPotentialSpec, s: SpinorField, T: float, dt: float,
                                 stride: int = 1, store: bool = True,
                                 progress: bool = False) -> Trajectory:
    """Trajectory of exp(-i t A) s for t in [0, T]."""
    steps = _step_count(0.0, T, dt)
    return _run(s.grid, s.values, _stationary_matrix_stepper(spec, s.grid, dt), _spinor_maker(s.grid),
                0.0, dt, steps, stride, store, None, progress, spec,
                growth_limit=INSTABILITY_GROWTH)


def evolve_matrix_stationary(spec: MatrixPotentialSpec, s: SpinorField, t: float, dt: float) -> SpinorField:
    """
    Realize exp(-i t A) with
    A = [[-Delta/2 + alpha^2/2 + U, -W], [W, Delta/2 - alpha^2/2 - U]].
    """
    _check_step(dt)
    if t == 0:
        return s.with_values(s.values.copy())
    steps = _substeps(t, dt)
    step = t / steps
    advance = _stationary_matrix_stepper(spec, s.grid, step)
    values = s.values
    for k in range(steps):
        values = advance(values, k * step, k)
        if (k + 1) % FINITE_CHECK_INTERVAL == 0:
            _check_finite(values, k + 1)
    _check_finite(values, steps)
    return s.with_values(values)


def propagate_matrix_to(model: MatrixChargeTransferModel, s: SpinorField, t0: float, t1: float,
                        dt: float) -> SpinorField:
    """Final state of the moving matrix flow from t0 to t1 (t1 >= t0)."""
    _check_step(dt)
    if t1 == t0:
        return s.with_values(s.values.copy())
    steps = _substeps(t1 - t0, dt)
    step = (t1 - t0) / steps
    advance = _matrix_stepper(model, step)
    values = s.values
    for k in range(steps):
        values = advance(values, t0 + k * step, k)
    _check_finite(values, steps)
    return s.with_values(values)


def evolve_any(model: AnyModel, f: Union[ComplexField, SpinorField], t0: float, t1: float, dt: float,
               **kwargs) -> Trajectory:
    """Dispatch on the model kind."""
    if isinstance(model, MatrixChargeTransferModel):
        return evolve_matrix(model, f, t0, t1, dt, **kwargs)
    return evolve(model, f, t0, t1, dt, **kwargs)
