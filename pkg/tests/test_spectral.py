"""
Test suite for bound states, spectral projections and scattering preparation.
"""

import math
import unittest

import numpy as np

from dispersim.core.exceptions import ConfigurationError, HorizonError, NearThresholdError, PreparationError
from dispersim.core.fieldgrid import ComplexField, SpinorField, WavePacket, gaussian_packet, make_grid, random_band_limited_field
from dispersim.core.model import ChargeTransferModel, MatrixPotentialSpec, PotentialSpec
from dispersim.core.propagate import evolve_stationary, propagate_to
from dispersim.core.spectral import (
    bound_states,
    duhamel_wave_operator,
    lanczos_eigenvalues,
    matrix_eigenpairs,
    moving_bound_state,
    prepare_scattering_state,
    project_biorthogonal,
    project_point,
    project_point_moving,
)


class TestBoundStates(unittest.TestCase):
    """Test cases for the bound-state solver and projections."""

    @classmethod
    def setUpClass(cls):
        """Solve the reference well once."""
        cls.grid = make_grid(1, 256, 40.0)
        cls.spec = PotentialSpec(depth=1.0, width=1.0)
        cls.family = bound_states(cls.spec, cls.grid, k_max=1, tol=1e-6)

    def test_ground_state(self):
        """Test the ground state against the assembled Lanczos eigenvalue."""
        self.assertEqual(len(self.family), 1)
        state = self.family.states[0]
        self.assertLess(state.eigenvalue, -0.05)
        self.assertLess(state.residual, 1e-6)
        self.assertAlmostEqual(state.function.norm(), 1.0)
        reference = lanczos_eigenvalues(self.spec, self.grid, k=1)[0]
        self.assertAlmostEqual(state.eigenvalue, reference, delta=1e-6)

    def test_no_well_no_states(self):
        """Test that a zero-depth well has no bound states."""
        self.assertEqual(len(bound_states(PotentialSpec(depth=0.0), self.grid)), 0)

    def test_near_threshold(self):
        """Test that eigenvalues inside the gap tolerance are refused."""
        with self.assertRaises(NearThresholdError) as context:
            bound_states(self.spec, self.grid, k_max=1, gap_tol=5.0)
        self.assertLess(context.exception.eigenvalue, 0.0)

    def test_projection_splits_field(self):
        """Test that bound and continuous parts add up and are orthogonal."""
        f = gaussian_packet(self.grid, WavePacket(center=(1.0,), momentum=(0.5,)))
        bound = project_point(f, self.family, 'bound')
        continuous = project_point(f, self.family, 'continuous')
        np.testing.assert_allclose((bound + continuous).values, f.values, atol=1e-14)
        self.assertLess(abs(continuous.inner(self.family.states[0].function)), 1e-12)
        again = project_point(bound, self.family, 'bound')
        np.testing.assert_allclose(again.values, bound.values, atol=1e-12)
        with self.assertRaises(ConfigurationError):
            project_point(f, self.family, 'other')

    def test_moving_projection_keeps_moving_state(self):
        """Test that the moving bound state lies in the moving bound range."""
        v = (2 * 2.0 * math.pi / 40.0,)
        carried = moving_bound_state(self.family.states[0], v, 1.3)
        projected = project_point_moving(carried, self.family, v, 1.3)
        np.testing.assert_allclose(projected.values, carried.values, atol=1e-10)

    def test_moving_state_is_carried_by_flow(self):
        """Test that a bound state rides along with its moving well."""
        v = (2 * 2.0 * math.pi / 40.0,)
        model = ChargeTransferModel((PotentialSpec(depth=1.0, width=1.0, velocity=v),), self.grid)
        state = self.family.states[0]
        evolved = propagate_to(model, moving_bound_state(state, v, 0.0), 0.0, 1.0, 0.001)
        self.assertLess((evolved - moving_bound_state(state, v, 1.0)).norm(), 1e-4)


class TestBoundStateOracles(unittest.TestCase):
    """Test cases against closed-form and assembled-matrix eigenpairs."""

    @classmethod
    def setUpClass(cls):
        """Solve the reflectionless sech^2 well once."""
        cls.grid = make_grid(1, 512, 40.0)
        cls.spec = PotentialSpec(shape='sech2', depth=1.0, width=1.0)
        cls.state = bound_states(cls.spec, cls.grid, k_max=1).states[0]

    def test_reflectionless_well(self):
        """Test -sech^2 against lambda = -1/2 and w = sech / sqrt(2)."""
        self.assertAlmostEqual(self.state.eigenvalue, -0.5, delta=1e-4)
        exact = ComplexField(self.grid, (1.0 / np.cosh(self.grid.axis) / math.sqrt(2.0)).astype(complex))
        error = (self.state.function - exact).norm() / exact.norm()
        self.assertLess(error, 1e-3)

    def test_phase_rotation(self):
        """Test that the split-step flow only rotates the phase of a bound state."""
        evolved = evolve_stationary(self.spec, self.state.function, 10.0, 0.001)
        rotated = evolved * np.exp(1j * self.state.eigenvalue * 10.0)
        self.assertLess((rotated - self.state.function).norm(), 1e-4)

    def test_three_dimensional_well(self):
        """Test a 3D Gaussian well against the Lanczos eigenvalue on N = 16."""
        grid = make_grid(3, 16, 16.0)
        spec = PotentialSpec(depth=1.5, width=1.5)
        family = bound_states(spec, grid, k_max=1)
        reference = lanczos_eigenvalues(spec, grid, k=1)[0]
        self.assertEqual(len(family), 1)
        self.assertLess(reference, -0.3)
        self.assertAlmostEqual(family.states[0].eigenvalue, reference, delta=1e-3)


class TestScatteringPreparation(unittest.TestCase):
    """Test cases for scattering-state preparation and wave operators."""

    @classmethod
    def setUpClass(cls):
        """Solve both channels of a two-well model."""
        cls.grid = make_grid(1, 256, 40.0)
        v = 2 * 2.0 * math.pi / 40.0
        cls.model = ChargeTransferModel((
            PotentialSpec(depth=1.0, center=(-8.0,), velocity=(0.0,)),
            PotentialSpec(depth=1.0, center=(8.0,), velocity=(v,)),
        ), cls.grid)
        cls.families = [bound_states(spec, cls.grid, k_max=1, channel=j)
                        for j, spec in enumerate(cls.model.potentials)]

    def test_prepared_state_is_orthogonal(self):
        """Test that every channel overlap is removed."""
        packet = WavePacket(center=(-8.0,), momentum=(0.8,), width=1.0)
        prepared = prepare_scattering_state(packet, self.model, self.families)
        self.assertLess(max(prepared.overlaps), 1e-8)
        self.assertAlmostEqual(prepared.field.norm(), 1.0)
        self.assertGreater(prepared.subtracted_mass, 0.0)
        self.assertIn('passes', prepared.to_dict())

    def test_pure_bound_state_refused(self):
        """Test that a packet without scattering part is refused."""
        state = self.families[0].states[0]
        with self.assertRaises(PreparationError):
            prepare_scattering_state(state.function, self.model, self.families[:1])

    def test_wave_operator_arguments(self):
        """Test horizon validation of the Duhamel wave operator."""
        state = self.families[1].states[0]
        with self.assertRaises(ConfigurationError):
            duhamel_wave_operator(self.model, 1, state, 2.0, 1.0)
        with self.assertRaises(HorizonError):
            duhamel_wave_operator(self.model, 1, state, 0.0, 100.0)
        self.assertEqual(duhamel_wave_operator(self.model, 1, state, 1.0, 1.0).distance, 0.0)

    def test_wave_operator_close_to_bound_state(self):
        """Test that separated wells barely disturb the channel bound state."""
        state = self.families[1].states[0]
        result = duhamel_wave_operator(self.model, 1, state, 0.0, 2.0, dt=0.002)
        self.assertLess(result.distance, 1e-3)


class TestMatrixEigenpairs(unittest.TestCase):
    """Test cases for the biorthogonal eigenpairs of the matrix operator."""

    @classmethod
    def setUpClass(cls):
        """Diagonalize a small matrix operator."""
        cls.grid = make_grid(1, 64, 20.0)
        cls.spec = MatrixPotentialSpec(u=PotentialSpec(depth=1.0), w=PotentialSpec(depth=0.3), alpha=1.5)
        cls.pairs = matrix_eigenpairs(cls.spec, cls.grid)

    def test_pairs_in_gap(self):
        """Test residuals and the gap location of the eigenvalues."""
        self.assertGreaterEqual(len(self.pairs), 1)
        for pair in self.pairs:
            with self.subTest(eigenvalue=pair.eigenvalue):
                self.assertLess(abs(pair.eigenvalue.real), self.spec.threshold)
                self.assertLess(pair.right_residual, 1e-8)
                self.assertLess(pair.left_residual, 1e-8)

    def test_biorthonormal(self):
        """Test <phi_i, psi_j> = delta_ij."""
        for i, first in enumerate(self.pairs):
            for j, second in enumerate(self.pairs):
                with self.subTest(i=i, j=j):
                    self.assertAlmostEqual(abs(first.right.inner(second.left)), float(i == j), places=8)

    def test_projection_is_idempotent(self):
        """Test that the biorthogonal projection is a projection."""
        rng = np.random.default_rng(5)
        s = SpinorField(random_band_limited_field(self.grid, rng), random_band_limited_field(self.grid, rng))
        once = project_biorthogonal(s, self.pairs, 'bound')
        twice = project_biorthogonal(once, self.pairs, 'bound')
        np.testing.assert_allclose(twice.values, once.values, atol=1e-8)

    def test_requires_one_dimension(self):
        """Test that higher-dimensional grids are refused."""
        with self.assertRaises(ConfigurationError):
            matrix_eigenpairs(self.spec, make_grid(2, 16, 10.0))


if __name__ == '__main__':
    unittest.main()
