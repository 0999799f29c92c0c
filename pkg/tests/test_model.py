"""
Test suite for charge transfer model descriptions.
"""

import math
import unittest

import numpy as np

from dispersim.core.exceptions import CommensurabilityError, ConfigurationError, ModelValidationError
from dispersim.core.fieldgrid import make_grid
from dispersim.core.model import (
    ChargeTransferModel,
    MatrixChargeTransferModel,
    MatrixPotentialSpec,
    PotentialSpec,
    check_commensurate,
    is_commensurate,
    matrix_potential_field,
    matrix_potential_values,
    potential_field,
    snap_velocity,
    validate_model,
    wrap_horizon,
)


class TestPotentialSpec(unittest.TestCase):
    """Test cases for scalar wells."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = make_grid(1, 256, 64.0)
        self.step = 2.0 * math.pi / 64.0

    def test_invalid_parameters(self):
        """Test shape, width and depth validation."""
        for kwargs in [{'shape': 'square'}, {'width': 0.0}, {'depth': -1.0}]:
            with self.subTest(**kwargs):
                with self.assertRaises(ConfigurationError):
                    PotentialSpec(**kwargs)

    def test_from_dict_rejects_unknown_fields(self):
        """Test that misspelled fields are reported."""
        with self.assertRaises(ConfigurationError):
            PotentialSpec.from_dict({'depht': 1.0})

    def test_dict_round_trip(self):
        """Test that to_dict feeds from_dict."""
        spec = PotentialSpec('sech2', 2.0, 1.5, (3.0,), (self.step,))
        self.assertEqual(PotentialSpec.from_dict(spec.to_dict()), spec)

    def test_values_follow_the_well(self):
        """Test that the minimum of the well moves with its velocity."""
        v = 4 * self.step
        spec = PotentialSpec('gaussian', 2.0, 1.0, (0.0,), (v,))
        for t in (0.0, 2.0, 5.0):
            with self.subTest(t=t):
                values = potential_field(spec, t, self.grid).values.real
                self.assertAlmostEqual(values.min(), -2.0, delta=0.05)
                self.assertAlmostEqual(self.grid.axis[np.argmin(values)], v * t, delta=self.grid.spacing)

    def test_profiles_are_one_at_center(self):
        """Test the normalization of every profile."""
        for shape in ('gaussian', 'exponential-smooth', 'sech2'):
            with self.subTest(shape=shape):
                spec = PotentialSpec(shape, 1.0, 1.0)
                self.assertAlmostEqual(float(spec.profile(np.array(0.0))), 1.0)

    def test_wraps_across_boundary(self):
        """Test that a well near the edge reaches the other side."""
        spec = PotentialSpec('gaussian', 1.0, 1.0, (31.5,))
        values = spec.values(self.grid)
        self.assertLess(values[0], -0.5)

    def test_stationary_copy(self):
        """Test that stationary() drops the velocity only."""
        spec = PotentialSpec('gaussian', 1.0, 1.0, (2.0,), (self.step,))
        frozen = spec.stationary()
        self.assertEqual(frozen.center, (2.0,))
        np.testing.assert_allclose(frozen.velocity_on(self.grid), [0.0])


class TestCommensurability(unittest.TestCase):
    """Test cases for velocity lattice checks."""

    def test_snap_and_check(self):
        """Test snapping to the (2 pi / L) lattice."""
        snapped = snap_velocity([0.4], 160.0)
        self.assertAlmostEqual(snapped[0], 10 * 2.0 * math.pi / 160.0)
        self.assertTrue(is_commensurate(snapped, 160.0))
        self.assertFalse(is_commensurate([0.4], 160.0))

    def test_check_carries_suggestion(self):
        """Test that the error names the nearest lattice velocity."""
        grid = make_grid(1, 64, 160.0)
        with self.assertRaises(CommensurabilityError) as context:
            check_commensurate([0.4], grid)
        self.assertAlmostEqual(context.exception.suggestion[0], 10 * 2.0 * math.pi / 160.0)


class TestValidateModel(unittest.TestCase):
    """Test cases for structural model validation."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = make_grid(1, 512, 160.0)
        self.step = 2.0 * math.pi / 160.0

    def test_empty_model(self):
        """Test that a model without wells is refused."""
        with self.assertRaises(ModelValidationError):
            validate_model(ChargeTransferModel((), self.grid))

    def test_equal_velocities(self):
        """Test that coinciding velocities are refused."""
        v = (5 * self.step,)
        model = ChargeTransferModel((PotentialSpec(center=(-20.0,), velocity=v),
                                     PotentialSpec(center=(20.0,), velocity=v)), self.grid)
        with self.assertRaises(ModelValidationError):
            validate_model(model)

    def test_incommensurate_velocity(self):
        """Test that off-lattice velocities are refused."""
        model = ChargeTransferModel((PotentialSpec(velocity=(0.0,)),
                                     PotentialSpec(center=(20.0,), velocity=(0.4,))), self.grid)
        with self.assertRaises(CommensurabilityError):
            validate_model(model)

    def test_parallel_velocities_warn(self):
        """Test the parallel-velocity warning and the horizon."""
        model = ChargeTransferModel((PotentialSpec(center=(-20.0,), velocity=(5 * self.step,)),
                                     PotentialSpec(center=(20.0,), velocity=(10 * self.step,))), self.grid)
        with self.assertLogs('dispersim.core.model', level='WARNING'):
            report = validate_model(model)
        self.assertTrue(report.velocities_distinct)
        self.assertTrue(any('parallel' in w for w in report.warnings))
        self.assertAlmostEqual(report.horizon, (80.0 - 6.0) / (10 * self.step))
        self.assertEqual(report.to_dict()['horizon'], report.horizon)

    def test_boundary_magnitude_warning(self):
        """Test that wells reaching the boundary are reported."""
        grid = make_grid(1, 64, 8.0)
        model = ChargeTransferModel((PotentialSpec(width=3.0),), grid)
        with self.assertLogs('dispersim.core.model', level='WARNING'):
            report = validate_model(model)
        self.assertGreater(report.boundary_magnitudes[0], 1e-8)

    def test_stationary_horizon_is_infinite(self):
        """Test the horizon of resting wells."""
        model = ChargeTransferModel((PotentialSpec(),), self.grid)
        self.assertTrue(math.isinf(wrap_horizon(model)))
        self.assertEqual(validate_model(model).to_dict()['horizon'], 'inf')


class TestMatrixModel(unittest.TestCase):
    """Test cases for matrix charge transfer potentials."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = make_grid(1, 128, 40.0)
        self.spec = MatrixPotentialSpec(
            u=PotentialSpec(depth=1.0), w=PotentialSpec(depth=0.3),
            alpha=1.5, gamma=0.3, velocity=(2 * 2.0 * math.pi / 40.0,),
        )

    def test_requires_alpha(self):
        """Test alpha validation."""
        with self.assertRaises(ConfigurationError):
            MatrixPotentialSpec(u=PotentialSpec(), w=PotentialSpec(), alpha=0.0)
        with self.assertRaises(ConfigurationError):
            MatrixPotentialSpec.from_dict({'u': {'depth': 1.0}})

    def test_structure(self):
        """Test trace-freeness and the rotated off-diagonal entries."""
        for t in (0.0, 1.3):
            with self.subTest(t=t):
                m = matrix_potential_values(self.spec, t, self.grid)
                np.testing.assert_allclose(m[..., 0, 0] + m[..., 1, 1], 0.0, atol=1e-15)
                np.testing.assert_allclose(m[..., 1, 0], -np.conj(m[..., 0, 1]), atol=1e-15)
                self.assertAlmostEqual(np.abs(m[..., 0, 1]).max(), 0.3, delta=0.01)

    def test_threshold_and_model(self):
        """Test the continuous spectrum edge and the summed matrix."""
        self.assertAlmostEqual(self.spec.threshold, 1.125)
        model = MatrixChargeTransferModel((self.spec,), self.grid)
        np.testing.assert_allclose(model.potential_matrix(0.5),
                                   matrix_potential_values(self.spec, 0.5, self.grid))
        self.assertEqual(MatrixPotentialSpec.from_dict(self.spec.to_dict()), self.spec)

    def test_field_entries(self):
        """Test the entry-wise field view of the matrix potential."""
        (top_left, top_right), (bottom_left, bottom_right) = matrix_potential_field(self.spec, 0.7, self.grid)
        m = matrix_potential_values(self.spec, 0.7, self.grid)

        np.testing.assert_array_equal(top_left.values, m[..., 0, 0])
        np.testing.assert_array_equal(top_right.values, m[..., 0, 1])
        np.testing.assert_array_equal(bottom_left.values, m[..., 1, 0])
        np.testing.assert_array_equal(bottom_right.values, m[..., 1, 1])
        self.assertIs(top_left.grid, self.grid)


if __name__ == '__main__':
    unittest.main()
