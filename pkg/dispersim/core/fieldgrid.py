"""
Periodic Grids and Fields

Periodic spatial lattices, complex scalar and spinor fields living on them,
the unitary discrete Fourier transform and the norm functionals used by the
estimate checks.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.fft
from scipy.integrate import trapezoid

from .exceptions import ConfigurationError, GridMismatchError, InsufficientDataError

if TYPE_CHECKING:
    from .propagate import Trajectory

PAIR_TOLERANCE = 1e-12
SHELL_FRACTION = 0.1


def _is_power_of_two(value: int) -> bool:
    return value > 0 and (value & (value - 1)) == 0


@dataclass(frozen=True)
class Grid:
    """
    Uniform periodic lattice on the box [-L/2, L/2)^n.

    Coordinates are x_j = -L/2 + j*h and frequencies follow the FFT ordering
    of (2*pi/L) * {-N/2, ..., N/2 - 1}.
    """

    dimension: int
    points: int
    length: float

    @property
    def spacing(self) -> float:
        return self.length / self.points

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.points,) * self.dimension

    @property
    def size(self) -> int:
        return self.points ** self.dimension

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dimension

    @property
    def axes(self) -> Tuple[int, ...]:
        """Trailing array axes holding the spatial directions."""
        return tuple(range(-self.dimension, 0))

    @property
    def frequency_step(self) -> float:
        return 2.0 * math.pi / self.length

    @cached_property
    def axis(self) -> np.ndarray:
        return -0.5 * self.length + self.spacing * np.arange(self.points)

    @cached_property
    def axis_frequencies(self) -> np.ndarray:
        return 2.0 * math.pi * np.fft.fftfreq(self.points, d=self.spacing)

    @cached_property
    def coordinates(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis] * self.dimension), indexing='ij'))

    @cached_property
    def frequencies(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*([self.axis_frequencies] * self.dimension), indexing='ij'))

    @cached_property
    def frequency_squared(self) -> np.ndarray:
        return sum(xi ** 2 for xi in self.frequencies)

    @cached_property
    def shell_mask(self) -> np.ndarray:
        """Points within L/10 of the box boundary along any axis."""
        half = 0.5 * self.length
        width = SHELL_FRACTION * self.length
        mask = np.zeros(self.shape, dtype=bool)
        for x in self.coordinates:
            mask |= np.minimum(x + half, half - x) < width
        return mask

    @cached_property
    def boundary_layer(self) -> np.ndarray:
        """Outermost lattice layer (first or last index along any axis)."""
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.dimension):
            index = [slice(None)] * self.dimension
            index[axis] = 0
            mask[tuple(index)] = True
            index[axis] = -1
            mask[tuple(index)] = True
        return mask

    def as_point(self, point: Union[float, Sequence[float], None]) -> np.ndarray:
        """Coerce a scalar or sequence into an n-vector."""
        if point is None:
            return np.zeros(self.dimension)
        vector = np.atleast_1d(np.asarray(point, dtype=float))
        if vector.size == 1 and self.dimension > 1:
            vector = np.concatenate([vector, np.zeros(self.dimension - 1)])
        if vector.shape != (self.dimension,):
            raise ConfigurationError(
                f"Point {list(vector)} does not match grid dimension {self.dimension}"
            )
        return vector

    def displacement(self, center: Union[float, Sequence[float], None] = None) -> Tuple[np.ndarray, ...]:
        """Minimum-image displacement x - center per axis."""
        c = self.as_point(center)
        L = self.length
        return tuple(np.mod(x - c[i] + 0.5 * L, L) - 0.5 * L for i, x in enumerate(self.coordinates))

    def distance_squared(self, center: Union[float, Sequence[float], None] = None) -> np.ndarray:
        return sum(d ** 2 for d in self.displacement(center))

    def check_same(self, other: 'Grid') -> None:
        if self != other:
            raise GridMismatchError(f"Grid mismatch: {self} vs {other}")


def make_grid(n: int, N: int, L: float) -> Grid:
    """
    Build a periodic grid.

    Args:
        n: Spatial dimension (1, 2 or 3)
        N: Points per axis, a power of two >= 16
        L: Box length

    Returns:
        Grid instance

    Raises:
        ConfigurationError: If any argument is out of range
    """
    if n not in (1, 2, 3):
        raise ConfigurationError(f"Dimension must be 1, 2 or 3, got {n}")
    if not isinstance(N, (int, np.integer)) or N < 16 or not _is_power_of_two(int(N)):
        raise ConfigurationError(f"Points per axis must be a power of two >= 16, got {N}")
    if not L > 0:
        raise ConfigurationError(f"Box length must be positive, got {L}")
    return Grid(int(n), int(N), float(L))


@dataclass(frozen=True, eq=False)
class ComplexField:
    """Complex amplitudes on every lattice point of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.shape != self.grid.shape:
            raise ConfigurationError(
                f"Field shape {values.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("Field contains non-finite values")
        object.__setattr__(self, 'values', values)

    def with_values(self, values: np.ndarray) -> 'ComplexField':
        return ComplexField(self.grid, values)

    def norm(self) -> float:
        return lp_norm(self, 2)

    def inner(self, other: 'ComplexField') -> complex:
        return inner_product(self, other)

    def normalized(self) -> 'ComplexField':
        return self.with_values(self.values / self.norm())

    def conj(self) -> 'ComplexField':
        return self.with_values(np.conj(self.values))

    def __add__(self, other: 'ComplexField') -> 'ComplexField':
        self.grid.check_same(other.grid)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: 'ComplexField') -> 'ComplexField':
        self.grid.check_same(other.grid)
        return self.with_values(self.values - other.values)

    def __mul__(self, scalar: complex) -> 'ComplexField':
        return self.with_values(self.values * scalar)

    __rmul__ = __mul__

    @classmethod
    def zeros(cls, grid: Grid) -> 'ComplexField':
        return cls(grid, np.zeros(grid.shape, dtype=complex))


@dataclass(frozen=True, eq=False)
class SpinorField:
    """Two-component field (psi_1, psi_2) on one grid."""

    first: ComplexField
    second: ComplexField

    def __post_init__(self):
        self.first.grid.check_same(self.second.grid)

    @property
    def grid(self) -> Grid:
        return self.first.grid

    @property
    def values(self) -> np.ndarray:
        """Stacked component array of shape (2, *grid.shape)."""
        return np.stack([self.first.values, self.second.values])

    @classmethod
    def from_array(cls, grid: Grid, values: np.ndarray) -> 'SpinorField':
        return cls(ComplexField(grid, values[0]), ComplexField(grid, values[1]))

    def with_values(self, values: np.ndarray) -> 'SpinorField':
        return SpinorField.from_array(self.grid, values)

    def norm(self) -> float:
        return math.sqrt(self.first.norm() ** 2 + self.second.norm() ** 2)

    def inner(self, other: 'SpinorField') -> complex:
        return inner_product(self.first, other.first) + inner_product(self.second, other.second)

    def __add__(self, other: 'SpinorField') -> 'SpinorField':
        return SpinorField(self.first + other.first, self.second + other.second)

    def __sub__(self, other: 'SpinorField') -> 'SpinorField':
        return SpinorField(self.first - other.first, self.second - other.second)

    def __mul__(self, scalar: complex) -> 'SpinorField':
        return SpinorField(self.first * scalar, self.second * scalar)

    __rmul__ = __mul__


Field = Union[ComplexField, SpinorField]


def _parse_exponent(value: Union[float, str]) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ('inf', 'infinity', '∞'):
            return math.inf
        value = float(value)
    return float(value)


@dataclass(frozen=True)
class AdmissiblePair:
    """Schroedinger admissible exponents (p, q) with 2/p + n/q = n/2."""

    p: float
    q: float
    dimension: int = 3

    def __post_init__(self):
        p = _parse_exponent(self.p)
        q = _parse_exponent(self.q)
        object.__setattr__(self, 'p', p)
        object.__setattr__(self, 'q', q)
        n = self.dimension
        if p < 2:
            raise ConfigurationError(f"Time exponent must be >= 2, got {p}")
        if q < 2:
            raise ConfigurationError(f"Space exponent must be >= 2, got {q}")
        scaling = 2.0 / p + n / q
        if abs(scaling - 0.5 * n) > PAIR_TOLERANCE:
            raise ConfigurationError(
                f"Pair ({p}, {q}) violates 2/p + n/q = n/2 in dimension {n}"
            )
        if n == 3 and not 2 <= q <= 6:
            raise ConfigurationError(f"Space exponent must lie in [2, 6] for n = 3, got {q}")
        if n == 2 and p == 2:
            raise ConfigurationError("The endpoint p = 2 is not admissible for n = 2")

    @property
    def label(self) -> str:
        def fmt(value: float) -> str:
            return 'inf' if math.isinf(value) else f"{value:g}"
        return f"({fmt(self.p)},{fmt(self.q)})"

    def to_dict(self) -> dict:
        return {'p': 'inf' if math.isinf(self.p) else self.p,
                'q': 'inf' if math.isinf(self.q) else self.q}


def spectral_transform(f: Field, direction: str = 'forward') -> Field:
    """
    Unitary discrete Fourier transform over the spatial axes.

    Args:
        f: Scalar or spinor field
        direction: 'forward' or 'inverse'

    Returns:
        Field of the same kind holding the transformed values in FFT order
    """
    if direction == 'forward':
        values = scipy.fft.fftn(f.values, axes=f.grid.axes, norm='ortho')
    elif direction == 'inverse':
        values = scipy.fft.ifftn(f.values, axes=f.grid.axes, norm='ortho')
    else:
        raise ConfigurationError(f"Unknown transform direction: {direction}")
    return f.with_values(values)


def apply_multiplier(values: np.ndarray, multiplier: np.ndarray, grid: Grid) -> np.ndarray:
    """Apply a Fourier multiplier to raw values (scalar or stacked spinor)."""
    transformed = scipy.fft.fftn(values, axes=grid.axes, norm='ortho')
    return scipy.fft.ifftn(transformed * multiplier, axes=grid.axes, norm='ortho')


def inner_product(f: ComplexField, g: ComplexField) -> complex:
    """Lattice inner product sum f * conj(g) * h^n."""
    f.grid.check_same(g.grid)
    return complex(np.vdot(g.values, f.values) * f.grid.cell_volume)


def lp_norm(f: Field, p: float) -> float:
    """
    Lattice L^p norm (sum |f|^p h^n)^(1/p); the lattice maximum for p = inf.

    Spinor fields combine both components pointwise.
    """
    p = _parse_exponent(p)
    if p < 1:
        raise ConfigurationError(f"Exponent must be >= 1, got {p}")
    if isinstance(f, SpinorField):
        modulus = np.sqrt(np.abs(f.first.values) ** 2 + np.abs(f.second.values) ** 2)
    else:
        modulus = np.abs(f.values)
    peak = float(modulus.max()) if modulus.size else 0.0
    if math.isinf(p):
        return peak
    if peak == 0.0:
        return 0.0
    total = np.sum((modulus / peak) ** p) * f.grid.cell_volume
    return peak * float(total) ** (1.0 / p)


def sobolev_norm(f: Field, k: int) -> float:
    """H^k norm computed from the unitary transform with weight <xi>^k."""
    if k < 0:
        raise ConfigurationError(f"Sobolev order must be nonnegative, got {k}")
    if k == 0:
        return lp_norm(f, 2)
    hat = scipy.fft.fftn(f.values, axes=f.grid.axes, norm='ortho')
    weight = (1.0 + f.grid.frequency_squared) ** k
    return math.sqrt(float(np.sum(weight * np.abs(hat) ** 2)) * f.grid.cell_volume)


def weight(grid: Grid, center, sigma: float) -> np.ndarray:
    """The weight <x - center>^(-sigma) with torus distance."""
    return (1.0 + grid.distance_squared(center)) ** (-0.5 * sigma)


def weighted_l2_norm(f: ComplexField, center, sigma: float) -> float:
    """L^2 norm of <x - center>^(-sigma) f (minimum-image distance)."""
    if not sigma > 0:
        raise ConfigurationError(f"Weight exponent must be positive, got {sigma}")
    weighted = weight(f.grid, center, sigma) * f.values
    return math.sqrt(float(np.sum(np.abs(weighted) ** 2)) * f.grid.cell_volume)


def mixed_spacetime_norm(traj: 'Trajectory', pair: AdmissiblePair,
                         t_max: Optional[float] = None) -> float:
    """
    L^p_t L^q_x norm of a trajectory.

    Args:
        traj: Trajectory with uniformly spaced snapshots
        pair: Exponent pair
        t_max: Optional end of the time window

    Returns:
        Trapezoid-rule value of (int ||psi(t)||_q^p dt)^(1/p), or the maximum for p = inf

    Raises:
        InsufficientDataError: If fewer than 3 snapshots fall in the window
    """
    times = np.asarray(traj.times, dtype=float)
    values = np.asarray(traj.norm_series(pair.q), dtype=float)
    if t_max is not None:
        keep = times <= t_max + 1e-12
        times, values = times[keep], values[keep]
    if len(times) < 3:
        raise InsufficientDataError(
            f"Mixed norm needs at least 3 snapshots, got {len(times)}"
        )
    steps = np.diff(times)
    if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise InsufficientDataError("Snapshot times are not uniformly spaced")
    if math.isinf(pair.p):
        return float(values.max())
    peak = float(values.max())
    if peak == 0.0:
        return 0.0
    integral = trapezoid((values / peak) ** pair.p, times)
    return peak * float(integral) ** (1.0 / pair.p)


def list_admissible_pairs(n: int, count: int) -> List[AdmissiblePair]:
    """
    Enumerate admissible pairs, mass pair first.

    For n = 3 the endpoint (2, 6) follows; then p doubles from 4 with q fixed
    by the scaling relation. Dimensions 1 and 2 only get non-endpoint pairs.
    """
    if count < 1:
        raise ConfigurationError(f"Pair count must be at least 1, got {count}")
    if n not in (1, 2, 3):
        raise ConfigurationError(f"Dimension must be 1, 2 or 3, got {n}")
    pairs = [AdmissiblePair(math.inf, 2.0, n)]
    if n == 3:
        pairs.append(AdmissiblePair(2.0, 6.0, n))
    p = 4.0 if n > 1 else 8.0
    while len(pairs) < count:
        q = n / (0.5 * n - 2.0 / p)
        pairs.append(AdmissiblePair(p, q, n))
        p *= 2.0
    return pairs[:count]


@dataclass(frozen=True)
class WavePacket:
    """
    Gaussian wave-packet parameters: center, momentum and width.

    A band limit b tapers the spectrum by exp(-(|xi - k| / b)^8), which keeps
    narrow packets away from the Nyquist frequency of coarse grids.
    """

    center: Tuple[float, ...] = field(default_factory=tuple)
    momentum: Tuple[float, ...] = field(default_factory=tuple)
    width: float = 1.0
    band_limit: Optional[float] = None


def band_taper(grid: Grid, band_limit: float, momentum=None) -> np.ndarray:
    """Smooth spectral cutoff exp(-(|xi - k| / b)^8) around the momentum k."""
    k = grid.as_point(momentum)
    r2 = sum((xi - k[i]) ** 2 for i, xi in enumerate(grid.frequencies))
    return np.exp(-(r2 / band_limit ** 2) ** 4)


def spectral_edge_fraction(f: Field, fraction: float = 0.8) -> float:
    """Share of the mass carried by modes with |xi| above fraction * xi_max."""
    grid = f.grid
    hat = scipy.fft.fftn(f.values, axes=grid.axes, norm='ortho')
    weights = np.abs(hat) ** 2
    if weights.ndim > grid.dimension:
        weights = weights.sum(axis=0)
    total = float(weights.sum())
    if total == 0:
        return 0.0
    xi_max = math.pi / grid.spacing
    edge = np.sqrt(grid.frequency_squared) > fraction * xi_max
    return float(weights[edge].sum()) / total


def gaussian_packet(grid: Grid, packet: WavePacket, normalize: bool = True) -> ComplexField:
    """
    Sample exp(-|x-c|^2 / (2 w^2)) exp(i k.(x-c)) on the grid, spectrally
    tapered when the packet carries a band limit.

    Args:
        grid: Target grid
        packet: Packet parameters
        normalize: Scale to unit L^2 norm

    Returns:
        The sampled packet
    """
    if not packet.width > 0:
        raise ConfigurationError(f"Packet width must be positive, got {packet.width}")
    if packet.band_limit is not None and not packet.band_limit > 0:
        raise ConfigurationError(f"Packet band limit must be positive, got {packet.band_limit}")
    offsets = grid.displacement(packet.center or None)
    k = grid.as_point(packet.momentum or None)
    r2 = sum(d ** 2 for d in offsets)
    phase = sum(k[i] * d for i, d in enumerate(offsets))
    values = np.exp(-r2 / (2.0 * packet.width ** 2) + 1j * phase)
    if packet.band_limit is not None:
        values = apply_multiplier(values, band_taper(grid, packet.band_limit, k), grid)
    result = ComplexField(grid, values)
    return result.normalized() if normalize else result


def random_smooth_field(grid: Grid, rng: np.random.Generator, center=None,
                        width: float = 1.5, degree: int = 3) -> ComplexField:
    """
    Random smooth localized field: a Gaussian envelope times a random
    complex polynomial, normalized to unit L^2 norm.
    """
    offsets = grid.displacement(center)
    envelope = np.exp(-sum(d ** 2 for d in offsets) / (2.0 * width ** 2))
    poly = np.zeros(grid.shape, dtype=complex)
    for _ in range(degree + 1):
        term = np.full(grid.shape, rng.normal() + 1j * rng.normal(), dtype=complex)
        power = rng.integers(0, degree + 1)
        axis = rng.integers(0, grid.dimension)
        poly += term * (offsets[axis] / width) ** power
    return ComplexField(grid, envelope * poly).normalized()


def random_band_limited_field(grid: Grid, rng: np.random.Generator, cutoff: float = 0.5) -> ComplexField:
    """Random field whose modes are confined to |xi| < cutoff * xi_max."""
    xi_max = math.pi / grid.spacing
    hat = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    hat[np.sqrt(grid.frequency_squared) >= cutoff * xi_max] = 0.0
    values = scipy.fft.ifftn(hat, axes=grid.axes, norm='ortho')
    return ComplexField(grid, values).normalized()
