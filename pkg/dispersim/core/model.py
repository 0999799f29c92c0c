"""
Charge Transfer Models

Analytic descriptions of scalar and matrix charge transfer models and the
evaluation of their rigidly moving potentials on a periodic grid.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import CommensurabilityError, ConfigurationError, ModelValidationError
from .fieldgrid import ComplexField, Grid

logger = logging.getLogger(__name__)

SHAPES = ('gaussian', 'exponential-smooth', 'sech2')
COMMENSURATE_TOLERANCE = 1e-9


def _vector(value, dimension: int) -> Tuple[float, ...]:
    if value is None:
        return (0.0,) * dimension
    vector = np.atleast_1d(np.asarray(value, dtype=float))
    if vector.size == 1 and dimension > 1:
        vector = np.concatenate([vector, np.zeros(dimension - 1)])
    if vector.shape != (dimension,):
        raise ConfigurationError(f"Expected a {dimension}-vector, got {list(vector)}")
    return tuple(float(v) for v in vector)


@dataclass(frozen=True)
class PotentialSpec:
    """
    A rigidly moving well V(x) = -depth * profile(x - center - velocity * t).

    Profiles are 1 at the origin and decay at least like exp(-|x|/width).
    """

    shape: str = 'gaussian'
    depth: float = 1.0
    width: float = 1.0
    center: Tuple[float, ...] = field(default_factory=tuple)
    velocity: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigurationError(f"Unknown potential shape '{self.shape}', expected one of {SHAPES}")
        if not self.width > 0:
            raise ConfigurationError(f"Potential width must be positive, got {self.width}")
        if self.depth < 0:
            raise ConfigurationError(f"Potential depth must be nonnegative, got {self.depth}")
        object.__setattr__(self, 'center', tuple(float(c) for c in np.atleast_1d(self.center)))
        object.__setattr__(self, 'velocity', tuple(float(v) for v in np.atleast_1d(self.velocity)))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PotentialSpec':
        unknown = set(data) - {'shape', 'depth', 'width', 'center', 'velocity'}
        if unknown:
            raise ConfigurationError(f"Unknown potential fields: {sorted(unknown)}")
        return cls(
            shape=data.get('shape', 'gaussian'),
            depth=float(data.get('depth', 1.0)),
            width=float(data.get('width', 1.0)),
            center=tuple(np.atleast_1d(data.get('center', ()))),
            velocity=tuple(np.atleast_1d(data.get('velocity', ()))),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {'shape': self.shape, 'depth': self.depth, 'width': self.width,
                'center': list(self.center), 'velocity': list(self.velocity)}

    def velocity_on(self, grid: Grid) -> np.ndarray:
        return np.asarray(_vector(self.velocity or None, grid.dimension))

    def center_on(self, grid: Grid) -> np.ndarray:
        return np.asarray(_vector(self.center or None, grid.dimension))

    def stationary(self) -> 'PotentialSpec':
        """Frozen copy of the well (zero velocity)."""
        return replace(self, velocity=())

    def profile(self, r2: np.ndarray) -> np.ndarray:
        """Profile as a function of the squared distance."""
        w = self.width
        if self.shape == 'gaussian':
            return np.exp(-r2 / (2.0 * w * w))
        if self.shape == 'exponential-smooth':
            return np.exp(-(np.sqrt(r2 + w * w) - w) / w)
        return 1.0 / np.cosh(np.sqrt(r2) / w) ** 2

    def values(self, grid: Grid, t: float = 0.0) -> np.ndarray:
        """Real potential values -depth * profile at time t (minimum image)."""
        if self.depth == 0.0:
            return np.zeros(grid.shape)
        position = self.center_on(grid) + t * self.velocity_on(grid)
        return -self.depth * self.profile(grid.distance_squared(position))


@dataclass(frozen=True)
class ChargeTransferModel:
    """Scalar model: several wells translating at constant velocities."""

    potentials: Tuple[PotentialSpec, ...]
    grid: Grid

    def __post_init__(self):
        object.__setattr__(self, 'potentials', tuple(self.potentials))

    @property
    def is_free(self) -> bool:
        return all(spec.depth == 0.0 for spec in self.potentials)

    @property
    def velocities(self) -> List[np.ndarray]:
        return [spec.velocity_on(self.grid) for spec in self.potentials]

    def potential_values(self, t: float) -> np.ndarray:
        total = np.zeros(self.grid.shape)
        for spec in self.potentials:
            total += spec.values(self.grid, t)
        return total


@dataclass(frozen=True)
class MatrixPotentialSpec:
    """
    One channel of a matrix charge transfer model.

    U(x) = -u.depth * u.profile and W(x) = w.depth * w.profile, both moving
    with `velocity`; the sub-profile velocities are ignored and their centers
    act as offsets.
    """

    u: PotentialSpec
    w: PotentialSpec
    alpha: float
    gamma: float = 0.0
    velocity: Tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.alpha == 0:
            raise ConfigurationError("Matrix potential requires alpha != 0")
        object.__setattr__(self, 'velocity', tuple(float(v) for v in np.atleast_1d(self.velocity)))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MatrixPotentialSpec':
        try:
            return cls(
                u=PotentialSpec.from_dict(data.get('u', {'depth': 0.0})),
                w=PotentialSpec.from_dict(data.get('w', {'depth': 0.0})),
                alpha=float(data['alpha']),
                gamma=float(data.get('gamma', 0.0)),
                velocity=tuple(np.atleast_1d(data.get('velocity', ()))),
            )
        except KeyError as e:
            raise ConfigurationError(f"Matrix potential missing field {e}")

    def to_dict(self) -> Dict[str, Any]:
        return {'u': self.u.to_dict(), 'w': self.w.to_dict(), 'alpha': self.alpha,
                'gamma': self.gamma, 'velocity': list(self.velocity)}

    def velocity_on(self, grid: Grid) -> np.ndarray:
        return np.asarray(_vector(self.velocity or None, grid.dimension))

    def stationary(self) -> 'MatrixPotentialSpec':
        return replace(self, velocity=())

    @property
    def threshold(self) -> float:
        """Continuous spectrum edge mu = alpha^2 / 2 of the stationary operator."""
        return 0.5 * self.alpha ** 2

    def u_values(self, grid: Grid, t: float = 0.0) -> np.ndarray:
        if self.u.depth == 0.0:
            return np.zeros(grid.shape)
        shift = t * self.velocity_on(grid)
        return -self.u.depth * self.u.profile(grid.distance_squared(self.u.center_on(grid) + shift))

    def w_values(self, grid: Grid, t: float = 0.0) -> np.ndarray:
        if self.w.depth == 0.0:
            return np.zeros(grid.shape)
        shift = t * self.velocity_on(grid)
        return self.w.depth * self.w.profile(grid.distance_squared(self.w.center_on(grid) + shift))

    def phase(self, grid: Grid, t: float) -> np.ndarray:
        """theta at the moving argument: (alpha^2 - |v|^2) t + 2 x.v + gamma."""
        v = self.velocity_on(grid)
        x_dot_v = sum(v[i] * x for i, x in enumerate(grid.coordinates))
        return (self.alpha ** 2 - float(v @ v)) * t + 2.0 * x_dot_v + self.gamma


@dataclass(frozen=True)
class MatrixChargeTransferModel:
    """Matrix model: a list of moving 2x2 channels sharing one grid."""

    potentials: Tuple[MatrixPotentialSpec, ...]
    grid: Grid

    def __post_init__(self):
        object.__setattr__(self, 'potentials', tuple(self.potentials))

    @property
    def velocities(self) -> List[np.ndarray]:
        return [spec.velocity_on(self.grid) for spec in self.potentials]

    def potential_matrix(self, t: float) -> np.ndarray:
        """Summed 2x2 potential, array of shape (*grid.shape, 2, 2)."""
        total = np.zeros(self.grid.shape + (2, 2), dtype=complex)
        for spec in self.potentials:
            total += matrix_potential_values(spec, t, self.grid)
        return total


AnyModel = Union[ChargeTransferModel, MatrixChargeTransferModel]


def potential_field(spec: PotentialSpec, t: float, grid: Grid) -> ComplexField:
    """
    Evaluate V(x - y - v t) on the grid.

    Args:
        spec: Well description
        t: Time
        grid: Target grid

    Returns:
        Real-valued field -depth * profile with torus minimum-image argument
    """
    return ComplexField(grid, spec.values(grid, t).astype(complex))


def matrix_potential_values(spec: MatrixPotentialSpec, t: float, grid: Grid) -> np.ndarray:
    """Raw (*grid.shape, 2, 2) array of the moving matrix potential."""
    u = spec.u_values(grid, t)
    w = spec.w_values(grid, t)
    rotation = np.exp(1j * spec.phase(grid, t))
    out = np.empty(grid.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = u
    out[..., 0, 1] = -rotation * w
    out[..., 1, 0] = np.conj(rotation) * w
    out[..., 1, 1] = -u
    return out


def matrix_potential_field(spec: MatrixPotentialSpec, t: float, grid: Grid) -> Tuple[Tuple[ComplexField, ComplexField], Tuple[ComplexField, ComplexField]]:
    """
    Evaluate [[U, -e^{i theta} W], [e^{-i theta} W, -U]] at the moving argument.

    Returns:
        Nested pair of rows of ComplexFields
    """
    values = matrix_potential_values(spec, t, grid)
    return (
        (ComplexField(grid, values[..., 0, 0]), ComplexField(grid, values[..., 0, 1])),
        (ComplexField(grid, values[..., 1, 0]), ComplexField(grid, values[..., 1, 1])),
    )


def snap_velocity(velocity: Sequence[float], length: float) -> Tuple[float, ...]:
    """Nearest velocity on the lattice (2*pi/L) Z^n."""
    step = 2.0 * math.pi / length
    return tuple(float(round(v / step) * step) for v in velocity)


def is_commensurate(velocity: Sequence[float], length: float) -> bool:
    step = 2.0 * math.pi / length
    for v in velocity:
        k = v / step
        if abs(k - round(k)) > COMMENSURATE_TOLERANCE * max(1.0, abs(k)):
            return False
    return True


def check_commensurate(velocity: Sequence[float], grid: Grid) -> None:
    """
    Raises:
        CommensurabilityError: If the velocity is off the (2*pi/L) lattice
    """
    velocity = tuple(np.atleast_1d(np.asarray(velocity, dtype=float)))
    if not is_commensurate(velocity, grid.length):
        suggestion = snap_velocity(velocity, grid.length)
        raise CommensurabilityError(
            f"Velocity {list(velocity)} is not a multiple of 2*pi/L = {grid.frequency_step:.6g}; "
            f"nearest commensurate value is {list(suggestion)}",
            suggestion=suggestion,
        )


@dataclass
class ValidationReport:
    """Structural checks of a model."""

    velocities_distinct: bool
    commensurate: bool
    boundary_magnitudes: List[float]
    horizon: float
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'velocities_distinct': self.velocities_distinct,
            'commensurate': self.commensurate,
            'boundary_magnitudes': list(self.boundary_magnitudes),
            'horizon': self.horizon if math.isfinite(self.horizon) else 'inf',
            'warnings': list(self.warnings),
        }


def _boundary_magnitude(model: AnyModel, index: int) -> float:
    grid = model.grid
    layer = grid.boundary_layer
    spec = model.potentials[index]
    if isinstance(spec, MatrixPotentialSpec):
        magnitude = np.maximum(np.abs(spec.u_values(grid)), np.abs(spec.w_values(grid)))
    else:
        magnitude = np.abs(spec.values(grid, 0.0))
    return float(magnitude[layer].max())


def wrap_horizon(model: AnyModel, packet_radius: Optional[float] = None) -> float:
    """
    Time before a well travels far enough to wrap: (L/2 - radius) / max |v|.

    The default radius is six times the widest profile.
    """
    if packet_radius is None:
        widths = []
        for spec in model.potentials:
            if isinstance(spec, MatrixPotentialSpec):
                widths.extend([spec.u.width, spec.w.width])
            else:
                widths.append(spec.width)
        packet_radius = 6.0 * max(widths, default=1.0)
    speeds = [float(np.linalg.norm(v)) for v in model.velocities]
    top = max(speeds, default=0.0)
    if top == 0.0:
        return math.inf
    return max(0.5 * model.grid.length - packet_radius, 0.0) / top


def validate_model(model: AnyModel, packet_radius: Optional[float] = None) -> ValidationReport:
    """
    Structural checks of a scalar or matrix model.

    Args:
        model: Model to check
        packet_radius: Radius used for the wrap-safe horizon

    Returns:
        ValidationReport with distinctness, commensurability, boundary
        magnitudes and the horizon

    Raises:
        ModelValidationError: If two velocities coincide
        CommensurabilityError: If a velocity is off the lattice
    """
    if not model.potentials:
        raise ModelValidationError("Model needs at least one potential")
    warnings = []
    velocities = model.velocities
    for i in range(len(velocities)):
        for j in range(i + 1, len(velocities)):
            vi, vj = velocities[i], velocities[j]
            if np.allclose(vi, vj, atol=1e-12):
                raise ModelValidationError(
                    f"Velocities of potentials {i} and {j} are not distinct: {list(vi)}"
                )
            if not vi.any() or not vj.any():
                continue
            cross = np.linalg.norm(np.outer(vi, vj) - np.outer(vj, vi))
            if cross < 1e-12 * max(1.0, np.linalg.norm(vi) * np.linalg.norm(vj)):
                message = f"Velocities of potentials {i} and {j} are parallel"
                logger.warning(message)
                warnings.append(message)
    for v in velocities:
        check_commensurate(v, model.grid)

    magnitudes = [_boundary_magnitude(model, i) for i in range(len(model.potentials))]
    for i, magnitude in enumerate(magnitudes):
        if magnitude > 1e-8:
            message = f"Potential {i} reaches {magnitude:.3g} on the box boundary"
            logger.warning(message)
            warnings.append(message)

    horizon = wrap_horizon(model, packet_radius)
    logger.debug("Model validated: horizon %.4g, boundary magnitudes %s", horizon, magnitudes)
    return ValidationReport(
        velocities_distinct=True,
        commensurate=True,
        boundary_magnitudes=magnitudes,
        horizon=horizon,
        warnings=warnings,
    )
