"""
Spectral Analysis

Bound states of the stationary channel Hamiltonians, point and continuous
spectral projections (including the moving ones), scattering-state
preparation, Duhamel wave-operator approximations, and the biorthogonal
eigenpairs of the one-dimensional matrix operator.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh, minres

from .exceptions import (
    ConfigurationError,
    ConvergenceError,
    HorizonError,
    NearThresholdError,
    PreparationError,
)
from .fieldgrid import ComplexField, Grid, SpinorField, WavePacket, gaussian_packet, random_smooth_field
from .model import ChargeTransferModel, MatrixPotentialSpec, PotentialSpec, check_commensurate, wrap_horizon
from .propagate import evolve_stationary, propagate_to
from .symmetry import BoostSpec, galilei, galilei_inverse, galilei_spinor, galilei_spinor_inverse, modulation, modulation_inverse

logger = logging.getLogger(__name__)

GAP_TOL = 0.05
DELOCALIZED_SHELL = 1e-2
PROJECTION_TOL = 1e-10
MAX_PASSES = 50


@dataclass(frozen=True, eq=False)
class BoundState:
    """Normalized eigenfunction with negative eigenvalue and its residual."""

    eigenvalue: float
    function: ComplexField
    residual: float


@dataclass(frozen=True, eq=False)
class SpectralFamily:
    """Ordered bound states of one channel."""

    channel: int
    states: Tuple[BoundState, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    @property
    def eigenvalues(self) -> List[float]:
        return [s.eigenvalue for s in self.states]


@dataclass(frozen=True, eq=False)
class BiorthogonalPair:
    """Right eigenvector of A, left eigenvector of A*, and the eigenvalue."""

    right: SpinorField
    left: SpinorField
    eigenvalue: complex
    right_residual: float
    left_residual: float


class _RealHamiltonian:
    """H = -Delta/2 + V acting on real lattice arrays."""

    def __init__(self, grid: Grid, potential: np.ndarray):
        self.grid = grid
        self.potential = potential
        self.kinetic = 0.5 * grid.frequency_squared

    def apply(self, w: np.ndarray) -> np.ndarray:
        hat = scipy.fft.fftn(w, axes=self.grid.axes, norm='ortho')
        lap = np.real(scipy.fft.ifftn(self.kinetic * hat, axes=self.grid.axes, norm='ortho'))
        return lap + self.potential * w

    def dot(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.sum(a * b)) * self.grid.cell_volume

    def norm(self, a: np.ndarray) -> float:
        return math.sqrt(self.dot(a, a))

    def rayleigh(self, w: np.ndarray) -> Tuple[float, float]:
        hw = self.apply(w)
        rho = self.dot(w, hw) / self.dot(w, w)
        return rho, self.norm(hw - rho * w) / self.norm(w)

    def deflate(self, w: np.ndarray, found: Sequence[np.ndarray]) -> np.ndarray:
        for u in found:
            w = w - self.dot(w, u) * u
        return w

    def operator(self) -> LinearOperator:
        shape = self.grid.shape
        return LinearOperator(
            (self.grid.size, self.grid.size),
            matvec=lambda x: self.apply(np.real(x).reshape(shape)).ravel(),
            dtype=float,
        )

    def shell_fraction(self, w: np.ndarray) -> float:
        density = w * w
        return float(density[self.grid.shell_mask].sum() / density.sum())


def _imaginary_time(ham: _RealHamiltonian, w: np.ndarray, found: Sequence[np.ndarray],
                    dtau: float, max_iterations: int, chunk: int = 50) -> Tuple[np.ndarray, float, float]:
    grid = ham.grid
    kinetic = np.exp(-dtau * ham.kinetic)
    half = np.exp(-0.5 * dtau * ham.potential)
    previous = math.inf
    rho, residual = ham.rayleigh(w)
    for _ in range(0, max_iterations, chunk):
        for _ in range(chunk):
            hat = scipy.fft.fftn(half * w, axes=grid.axes, norm='ortho')
            w = half * np.real(scipy.fft.ifftn(kinetic * hat, axes=grid.axes, norm='ortho'))
            w = ham.deflate(w, found)
            w = w / ham.norm(w)
        rho, residual = ham.rayleigh(w)
        if residual < 1e-3 or abs(rho - previous) < 1e-12:
            break
        previous = rho
    return w, rho, residual


def _rayleigh_refine(ham: _RealHamiltonian, w: np.ndarray, found: Sequence[np.ndarray],
                     tol: float, steps: int = 6) -> Tuple[np.ndarray, float, float]:
    op = ham.operator()
    rho, residual = ham.rayleigh(w)
    for _ in range(steps):
        if residual < 1e-2 * tol:
            break
        y, _info = minres(op, w.ravel(), shift=rho, rtol=1e-13, maxiter=4000)
        y = ham.deflate(y.reshape(ham.grid.shape), found)
        w = y / ham.norm(y)
        rho, residual = ham.rayleigh(w)
    return w, rho, residual


def bound_states(spec: PotentialSpec, grid: Grid, k_max: int = 2, tol: float = 1e-6,
                 gap_tol: float = GAP_TOL, seed: int = 0, dtau: float = 0.05,
                 max_iterations: int = 20000, channel: int = 0) -> SpectralFamily:
    """
    Find up to k_max bound states of H = -Delta/2 + V for the frozen well.

    Imaginary-time split-step propagation with Gram-Schmidt deflation
    produces each candidate, which is then refined by Rayleigh quotient
    iteration. The search ends at the first candidate that is delocalized
    or has nonnegative energy.

    Args:
        spec: Well description (velocity ignored, center kept)
        grid: Grid to solve on
        k_max: Maximum number of states
        tol: Residual tolerance ||H w - lambda w||
        gap_tol: Eigenvalues in (-gap_tol, 0) are rejected
        seed: Seed of the initial guesses
        dtau: Imaginary time step
        max_iterations: Imaginary-time iteration cap per state
        channel: Channel index stored on the family

    Returns:
        SpectralFamily sorted ascending in eigenvalue

    Raises:
        ConvergenceError: If a candidate cannot be refined below tol
        NearThresholdError: If a localized eigenvalue lies in (-gap_tol, 0)
    """
    if spec.depth == 0.0:
        return SpectralFamily(channel, ())
    potential = spec.stationary().values(grid)
    ham = _RealHamiltonian(grid, potential)
    rng = np.random.default_rng(seed)
    center = spec.center_on(grid)
    found: List[np.ndarray] = []
    eigenvalues: List[float] = []

    for index in range(k_max):
        guess = np.real(random_smooth_field(grid, rng, center=center, width=1.5 * spec.width).values)
        guess = ham.deflate(guess, found)
        guess = guess / ham.norm(guess)
        w, rho, residual = _imaginary_time(ham, guess, found, dtau, max_iterations)
        logger.debug("Channel %d candidate %d: imaginary time gave %.8f (residual %.2e)",
                     channel, index, rho, residual)
        if ham.shell_fraction(w) > DELOCALIZED_SHELL or rho >= 0.0:
            break
        w, rho, residual = _rayleigh_refine(ham, w, found, tol)
        if residual > tol:
            raise ConvergenceError(
                f"Bound state {index} of channel {channel} did not converge: residual {residual:.3e}",
                residual=residual,
            )
        if ham.shell_fraction(w) > DELOCALIZED_SHELL or rho >= 0.0:
            break
        if rho > -gap_tol:
            raise NearThresholdError(
                f"Channel {channel} has eigenvalue {rho:.6f} inside (-{gap_tol}, 0)",
                eigenvalue=rho,
            )
        found.append(w)
        eigenvalues.append(rho)

    order = np.argsort(eigenvalues)
    states = []
    basis: List[np.ndarray] = []
    for i in order:
        w = ham.deflate(found[i], basis)
        w = w / ham.norm(w)
        peak = w.ravel()[np.argmax(np.abs(w))]
        w = w * np.sign(peak)
        basis.append(w)
        rho, residual = ham.rayleigh(w)
        states.append(BoundState(rho, ComplexField(grid, w.astype(complex)), residual))
        logger.debug("Channel %d bound state: lambda = %.10f, residual %.2e", channel, rho, residual)
    return SpectralFamily(channel, tuple(states))


def spectral_second_derivative(points: int, length: float) -> np.ndarray:
    """Dense real matrix of the spectral d^2/dx^2 on a periodic axis."""
    xi = 2.0 * math.pi * np.fft.fftfreq(points, d=length / points)
    identity = np.eye(points)
    return np.real(np.fft.ifft(-(xi ** 2)[:, None] * np.fft.fft(identity, axis=0), axis=0))


def assemble_hamiltonian(potential: np.ndarray, grid: Grid) -> sp.csr_matrix:
    """
    Sparse spectral Hamiltonian -Delta/2 + V built from Kronecker products
    of the 1D spectral second-derivative matrix (C-order flattening).
    """
    d2 = sp.csr_matrix(spectral_second_derivative(grid.points, grid.length))
    eye = sp.identity(grid.points, format='csr')
    laplacian = sp.csr_matrix((grid.size, grid.size))
    for axis in range(grid.dimension):
        factors = [eye] * grid.dimension
        factors[axis] = d2
        term = factors[0]
        for factor in factors[1:]:
            term = sp.kron(term, factor, format='csr')
        laplacian = laplacian + term
    return (-0.5 * laplacian + sp.diags(np.asarray(potential).ravel())).tocsr()


def lanczos_eigenvalues(spec: PotentialSpec, grid: Grid, k: int = 1) -> np.ndarray:
    """Lowest k eigenvalues of the assembled Hamiltonian (Lanczos)."""
    matrix = assemble_hamiltonian(spec.stationary().values(grid), grid)
    values = eigsh(matrix, k=k, which='SA', return_eigenvectors=False)
    return np.sort(values)


def project_point(f: ComplexField, family: SpectralFamily, part: str = 'bound') -> ComplexField:
    """
    Orthogonal projection onto the bound states or its complement.

    Args:
        f: Field
        family: Bound states (may be empty)
        part: 'bound' or 'continuous'

    Returns:
        sum_i <f, w_i> w_i, or f minus it
    """
    if part not in ('bound', 'continuous'):
        raise ConfigurationError(f"Unknown projection part: {part}")
    bound = np.zeros(f.grid.shape, dtype=complex)
    for state in family:
        f.grid.check_same(state.function.grid)
        bound += f.inner(state.function) * state.function.values
    if part == 'bound':
        return f.with_values(bound)
    return f.with_values(f.values - bound)


def project_point_moving(f: ComplexField, family: SpectralFamily, v, t: float,
                         part: str = 'bound') -> ComplexField:
    """
    Projection onto the bound states carried by a well of velocity v:
    g_v(t) P_b g_v(t)^{-1}, or its complement.

    Raises:
        CommensurabilityError: If v is off the lattice
    """
    if part not in ('bound', 'continuous'):
        raise ConfigurationError(f"Unknown projection part: {part}")
    boost = BoostSpec(velocity=tuple(np.atleast_1d(v)), time=t)
    pulled = galilei_inverse(f, boost)
    bound = galilei(project_point(pulled, family, 'bound'), boost)
    if part == 'bound':
        return bound
    return f - bound


def moving_bound_state(state: BoundState, v, t: float) -> ComplexField:
    """The bound state travelling with its well: g_v(t) e^{-i lambda t} w."""
    boost = BoostSpec(velocity=tuple(np.atleast_1d(v)), time=t)
    return galilei(state.function * np.exp(-1j * state.eigenvalue * t), boost)


@dataclass(eq=False)
class ScatteringPreparation:
    """Prepared scattering datum and preparation diagnostics."""

    field: ComplexField
    subtracted_mass: float
    overlaps: List[float]
    passes: int
    corrected: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {
            'subtracted_mass': self.subtracted_mass,
            'overlaps': list(self.overlaps),
            'passes': self.passes,
            'corrected': self.corrected,
        }


def _channel_overlaps(f: ComplexField, model: ChargeTransferModel, families: Sequence[SpectralFamily],
                      t: float = 0.0) -> List[float]:
    return [
        project_point_moving(f, family, model.potentials[family.channel].velocity_on(model.grid), t).norm()
        for family in families
    ]


def _gram_schmidt(fields: Sequence[ComplexField]) -> List[ComplexField]:
    basis: List[ComplexField] = []
    for f in fields:
        for b in basis:
            f = f - f.inner(b) * b
        norm = f.norm()
        if norm > 1e-10:
            basis.append(f * (1.0 / norm))
    return basis


def prepare_scattering_state(packet, model: ChargeTransferModel, families: Sequence[SpectralFamily],
                             tol: float = PROJECTION_TOL, max_passes: int = MAX_PASSES,
                             horizon: Optional[float] = None, dt: float = 1e-3) -> ScatteringPreparation:
    """
    Remove the bound components of every channel from a wave packet.

    By default the instantaneous (t = 0) bound projections are subtracted by
    alternating projections until every residual overlap is below tol. With
    a horizon, the span of the wave-operator images Omega_j(0) w of all bound
    states is removed instead.

    Args:
        packet: WavePacket or ComplexField
        model: Scalar model
        families: Bound states per channel (family.channel indexes the potential)
        tol: Overlap tolerance
        max_passes: Alternating projection cap
        horizon: Optional Duhamel horizon for the corrected preparation
        dt: Time step of the Duhamel propagations

    Returns:
        ScatteringPreparation with the unit-norm field

    Raises:
        PreparationError: If nothing remains or the projections do not converge
    """
    if isinstance(packet, WavePacket):
        f = gaussian_packet(model.grid, packet)
    else:
        f = packet.normalized()
    initial_mass = f.norm() ** 2

    if horizon is not None:
        images = []
        for family in families:
            for state in family:
                result = duhamel_wave_operator(model, family.channel, state, 0.0, horizon, dt)
                images.append(result.field)
        basis = _gram_schmidt(images)
        for b in basis:
            f = f - f.inner(b) * b
        passes = 1
    else:
        passes = 0
        while True:
            if f.norm() < 1e-8:
                break
            overlaps = _channel_overlaps(f, model, families)
            if max(overlaps, default=0.0) < tol * max(f.norm(), 1e-300):
                break
            if passes >= max_passes:
                raise PreparationError(
                    f"Alternating projections did not converge in {max_passes} passes "
                    f"(overlaps {overlaps})"
                )
            for family in families:
                v = model.potentials[family.channel].velocity_on(model.grid)
                f = project_point_moving(f, family, v, 0.0, 'continuous')
            passes += 1
        if passes > 3:
            logger.warning("Scattering preparation needed %d alternating passes", passes)

    remaining = f.norm()
    if remaining < 1e-8:
        raise PreparationError("Packet has no scattering component (pure bound state)")
    subtracted = initial_mass - remaining ** 2
    f = f * (1.0 / remaining)
    overlaps = _channel_overlaps(f, model, families)
    logger.debug("Prepared scattering state: subtracted mass %.3e, overlaps %s", subtracted, overlaps)
    return ScatteringPreparation(f, subtracted, overlaps, passes, corrected=horizon is not None)


@dataclass(eq=False)
class WaveOperatorResult:
    """Approximate Omega_j(s) w and its distance to the instantaneous bound state."""

    field: ComplexField
    distance: float


def duhamel_wave_operator(model: ChargeTransferModel, channel: int, state: BoundState, s: float,
                          T: float, dt: float = 1e-3) -> WaveOperatorResult:
    """
    Approximate the channel wave operator on a bound state:
    U(s, T) U_j(T, s) b_j(s), with b_j(s) = g_j(s) e^{-i lambda s} w the
    instantaneous bound state and U_j the single-well flow conjugated by the
    channel boost.

    Raises:
        ConfigurationError: If T < s
        HorizonError: If T exceeds the wrap-safe horizon
    """
    if T < s:
        raise ConfigurationError(f"Horizon {T} precedes start time {s}")
    horizon = wrap_horizon(model)
    if T > horizon:
        raise HorizonError(f"Horizon {T} exceeds the wrap-safe window {horizon:.4g}")
    spec = model.potentials[channel]
    v = spec.velocity_on(model.grid)
    instantaneous = moving_bound_state(state, v, s)
    if T == s:
        return WaveOperatorResult(instantaneous, 0.0)
    boost_start = BoostSpec(velocity=tuple(v), time=s)
    boost_end = BoostSpec(velocity=tuple(v), time=T)
    channel_flow = evolve_stationary(spec, galilei_inverse(instantaneous, boost_start), T - s, dt)
    reference = galilei(channel_flow, boost_end)
    pulled_back = propagate_to(model, reference, T, s, dt)
    return WaveOperatorResult(pulled_back, (pulled_back - instantaneous).norm())


def _assembled_matrix_operator(spec: MatrixPotentialSpec, grid: Grid) -> np.ndarray:
    if grid.dimension != 1:
        raise ConfigurationError("Matrix eigenpairs are computed in one dimension only")
    kinetic = -0.5 * spectral_second_derivative(grid.points, grid.length)
    u = np.diag(spec.u_values(grid))
    w = np.diag(spec.w_values(grid))
    shift = spec.threshold * np.eye(grid.points)
    return np.block([[kinetic + shift + u, -w], [w, -kinetic - shift - u]]).astype(complex)


def _as_spinor(grid: Grid, vector: np.ndarray) -> SpinorField:
    n = grid.points
    return SpinorField(ComplexField(grid, vector[:n]), ComplexField(grid, vector[n:]))


def matrix_eigenpairs(spec: MatrixPotentialSpec, grid: Grid, margin: float = 1e-3,
                      localization: float = DELOCALIZED_SHELL) -> List[BiorthogonalPair]:
    """
    Localized eigenpairs of the stationary matrix operator A in the spectral
    gap (|Re w| < alpha^2/2 - margin) or off the real axis, from a dense
    eigen-decomposition of the assembled 1D operator.

    Returns:
        Pairs normalized so that <right, left> = 1
    """
    matrix = _assembled_matrix_operator(spec, grid)
    values, left, right = scipy.linalg.eig(matrix, left=True, right=True)
    h = grid.spacing
    mu = spec.threshold
    pairs = []
    for i, omega in enumerate(values):
        in_gap = abs(omega.real) < mu - margin
        off_axis = abs(omega.imag) > 1e-6 * max(1.0, abs(omega))
        if not (in_gap or off_axis):
            continue
        phi = right[:, i] / math.sqrt(np.sum(np.abs(right[:, i]) ** 2) * h)
        density = np.abs(phi[:grid.points]) ** 2 + np.abs(phi[grid.points:]) ** 2
        if density[grid.shell_mask].sum() / density.sum() > localization:
            continue
        psi = left[:, i]
        overlap = np.sum(phi * np.conj(psi)) * h
        if abs(overlap) < 1e-12:
            continue
        psi = psi * np.conj(1.0 / overlap)
        right_residual = math.sqrt(np.sum(np.abs(matrix @ phi - omega * phi) ** 2) * h)
        left_residual = math.sqrt(np.sum(np.abs(matrix.conj().T @ psi - np.conj(omega) * psi) ** 2) * h)
        pairs.append(BiorthogonalPair(_as_spinor(grid, phi), _as_spinor(grid, psi), complex(omega),
                                      right_residual, left_residual))
    pairs.sort(key=lambda p: (p.eigenvalue.real, p.eigenvalue.imag))
    logger.debug("Matrix operator: %d localized eigenpairs %s", len(pairs), [p.eigenvalue for p in pairs])
    return pairs


def project_biorthogonal(s: SpinorField, pairs: Sequence[BiorthogonalPair], part: str = 'bound') -> SpinorField:
    """P_b = sum_j phi_j <., psi_j*> and P_c = Id - P_b."""
    if part not in ('bound', 'continuous'):
        raise ConfigurationError(f"Unknown projection part: {part}")
    bound = np.zeros((2,) + s.grid.shape, dtype=complex)
    for pair in pairs:
        bound += s.inner(pair.left) * pair.right.values
    if part == 'bound':
        return s.with_values(bound)
    return s.with_values(s.values - bound)


def project_point_moving_matrix(s: SpinorField, pairs: Sequence[BiorthogonalPair], spec: MatrixPotentialSpec,
                                t: float, part: str = 'bound') -> SpinorField:
    """
    Moving biorthogonal projection G_v(t) M(t)^{-1} P_b(A) M(t) G_v(t)^{-1}.
    """
    v = spec.velocity_on(s.grid)
    check_commensurate(v, s.grid)
    boost = BoostSpec(velocity=tuple(v), time=t)
    pulled = modulation(spec.alpha, spec.gamma, t, galilei_spinor_inverse(s, boost))
    projected = project_biorthogonal(pulled, pairs, 'bound')
    bound = galilei_spinor(modulation_inverse(spec.alpha, spec.gamma, t, projected), boost)
    if part == 'bound':
        return bound
    return s - bound
