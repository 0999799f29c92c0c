"""
Galilei Transformations

Scalar and spinor Galilei boosts, the diagonal matrix modulation, and the
conjugated boost helper.

Convention: (g_{v,y}(t) f)(x) = exp(-i|v|^2 t/2) exp(i x.v) f(x - y - v t),
so that g(t) e^{-it|xi|^2/2} = e^{-it|xi|^2/2} g(0) holds exactly and
g_{v,0}(t)^{-1} = g_{-v,0}(t). Translations are Fourier phases and therefore
exact for any real shift.
"""

from dataclasses import dataclass, field, replace
from typing import Sequence, Tuple

import numpy as np

from .fieldgrid import ComplexField, Grid, SpinorField, apply_multiplier
from .model import check_commensurate


@dataclass(frozen=True)
class BoostSpec:
    """Boost parameters: velocity v, offset y and time t."""

    velocity: Tuple[float, ...] = field(default_factory=tuple)
    offset: Tuple[float, ...] = field(default_factory=tuple)
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'velocity', tuple(float(v) for v in np.atleast_1d(self.velocity)))
        object.__setattr__(self, 'offset', tuple(float(y) for y in np.atleast_1d(self.offset)))
        object.__setattr__(self, 'time', float(self.time))

    def at(self, t: float) -> 'BoostSpec':
        """Same boost evaluated at another time."""
        return replace(self, time=t)

    def reversed(self) -> 'BoostSpec':
        """Boost with velocity -v and offset -y at the same time."""
        return BoostSpec(tuple(-v for v in self.velocity), tuple(-y for y in self.offset), self.time)

    def vectors(self, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
        v = grid.as_point(self.velocity or None)
        y = grid.as_point(self.offset or None)
        check_commensurate(v, grid)
        return v, y


def translate_values(values: np.ndarray, grid: Grid, shift: Sequence[float]) -> np.ndarray:
    """f(x - shift) via the Fourier phase exp(-i xi.shift)."""
    shift = np.asarray(shift, dtype=float)
    if not shift.any():
        return np.array(values, dtype=complex)
    phase = sum(xi * shift[i] for i, xi in enumerate(grid.frequencies))
    return apply_multiplier(values, np.exp(-1j * phase), grid)


def plane_wave(grid: Grid, velocity: np.ndarray) -> np.ndarray:
    return np.exp(1j * sum(velocity[i] * x for i, x in enumerate(grid.coordinates)))


def boost_values(values: np.ndarray, grid: Grid, v: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
    """Raw-array Galilei boost (no commensurability check)."""
    shifted = translate_values(values, grid, y + v * t)
    return np.exp(-0.5j * float(v @ v) * t) * plane_wave(grid, v) * shifted


def galilei(f: ComplexField, b: BoostSpec) -> ComplexField:
    """
    Apply g_{v,y}(t).

    Args:
        f: Scalar field
        b: Boost parameters

    Returns:
        exp(-i|v|^2 t/2) exp(i x.v) f(x - y - v t)

    Raises:
        CommensurabilityError: If v is off the (2*pi/L) lattice
    """
    v, y = b.vectors(f.grid)
    return f.with_values(boost_values(f.values, f.grid, v, y, b.time))


def galilei_inverse(f: ComplexField, b: BoostSpec) -> ComplexField:
    """
    Exact inverse of galilei.

    For y = 0 this is the boost with velocity -v; otherwise the three
    factors are undone in reverse order.
    """
    v, y = b.vectors(f.grid)
    if not y.any():
        return f.with_values(boost_values(f.values, f.grid, -v, y, b.time))
    t = b.time
    undone = np.exp(0.5j * float(v @ v) * t) * f.values
    undone = plane_wave(f.grid, -v) * undone
    return f.with_values(translate_values(undone, f.grid, -(y + v * t)))


def conjugated_boost(f: ComplexField, b: BoostSpec) -> ComplexField:
    """
    exp(-i y.v) g_{-v,-y}(t) f, the boost of the form used for moving
    channels; it coincides with galilei_inverse(f, b).
    """
    v, y = b.vectors(f.grid)
    return f.with_values(np.exp(-1j * float(y @ v)) * boost_values(f.values, f.grid, -v, -y, b.time))


def galilei_spinor(s: SpinorField, b: BoostSpec) -> SpinorField:
    """G(t)(psi_1, psi_2) = (g psi_1, conj(g conj(psi_2)))."""
    return SpinorField(galilei(s.first, b), galilei(s.second.conj(), b).conj())


def galilei_spinor_inverse(s: SpinorField, b: BoostSpec) -> SpinorField:
    return SpinorField(galilei_inverse(s.first, b), galilei_inverse(s.second.conj(), b).conj())


def modulation_phases(alpha: float, gamma: float, t: float) -> Tuple[complex, complex]:
    omega = alpha ** 2 * t + gamma
    return np.exp(-0.5j * omega), np.exp(0.5j * omega)


def modulation(alpha: float, gamma: float, t: float, s: SpinorField) -> SpinorField:
    """
    Apply M(t) = diag(exp(-i omega/2), exp(i omega/2)) with omega = alpha^2 t + gamma.
    """
    first, second = modulation_phases(alpha, gamma, t)
    return SpinorField(s.first * first, s.second * second)


def modulation_inverse(alpha: float, gamma: float, t: float, s: SpinorField) -> SpinorField:
    return modulation(alpha, -gamma, -t, s)
