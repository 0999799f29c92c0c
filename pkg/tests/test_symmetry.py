"""
Test suite for Galilei boosts and matrix modulations.
"""

import math
import unittest

import numpy as np

from dispersim.core.exceptions import CommensurabilityError
from dispersim.core.fieldgrid import SpinorField, WavePacket, gaussian_packet, make_grid
from dispersim.core.propagate import free_evolve
from dispersim.core.symmetry import (
    BoostSpec,
    conjugated_boost,
    galilei,
    galilei_inverse,
    galilei_spinor,
    galilei_spinor_inverse,
    modulation,
    modulation_inverse,
    modulation_phases,
    translate_values,
)


class TestGalilei(unittest.TestCase):
    """Test cases for scalar boosts."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = make_grid(1, 256, 40.0)
        self.step = 2.0 * math.pi / 40.0
        self.f = gaussian_packet(self.grid, WavePacket(center=(-2.0,), momentum=(0.7,), width=1.3))

    def test_inverse(self):
        """Test that galilei_inverse undoes galilei with and without offset."""
        for offset in ((0.0,), (1.7,)):
            with self.subTest(offset=offset):
                boost = BoostSpec(velocity=(3 * self.step,), offset=offset, time=2.5)
                back = galilei_inverse(galilei(self.f, boost), boost)
                np.testing.assert_allclose(back.values, self.f.values, atol=1e-12)

    def test_conjugated_boost_matches_inverse(self):
        """Test the conjugated form of the inverse boost."""
        boost = BoostSpec(velocity=(2 * self.step,), offset=(0.9,), time=1.1)
        np.testing.assert_allclose(conjugated_boost(self.f, boost).values,
                                   galilei_inverse(self.f, boost).values, atol=1e-12)

    def test_boost_preserves_norm(self):
        """Test unitarity of the boost."""
        boost = BoostSpec(velocity=(5 * self.step,), time=3.0)
        self.assertAlmostEqual(galilei(self.f, boost).norm(), self.f.norm())

    def test_commutes_with_free_flow(self):
        """Test g(t) e^{-it|xi|^2/2} = e^{-it|xi|^2/2} g(0)."""
        t = 1.7
        boost = BoostSpec(velocity=(4 * self.step,))
        left = galilei(free_evolve(self.f, t), boost.at(t))
        right = free_evolve(galilei(self.f, boost.at(0.0)), t)
        np.testing.assert_allclose(left.values, right.values, atol=1e-11)

    def test_rejects_off_lattice_velocity(self):
        """Test that incommensurate boosts are refused."""
        with self.assertRaises(CommensurabilityError):
            galilei(self.f, BoostSpec(velocity=(0.3,), time=1.0))

    def test_translation_by_period(self):
        """Test that a full-period shift is the identity."""
        shifted = translate_values(self.f.values, self.grid, [self.grid.length])
        np.testing.assert_allclose(shifted, self.f.values, atol=1e-12)

    def test_reversed(self):
        """Test that the reversed boost negates velocity and offset."""
        boost = BoostSpec(velocity=(1.0, 2.0), offset=(0.5, 0.0), time=3.0)
        self.assertEqual(boost.reversed(), BoostSpec((-1.0, -2.0), (-0.5, -0.0), 3.0))


class TestSpinorSymmetries(unittest.TestCase):
    """Test cases for spinor boosts and the matrix modulation."""

    def setUp(self):
        """Set up test fixtures."""
        grid = make_grid(1, 128, 30.0)
        self.step = 2.0 * math.pi / 30.0
        first = gaussian_packet(grid, WavePacket(center=(1.0,), momentum=(0.4,)))
        second = gaussian_packet(grid, WavePacket(center=(-1.0,), momentum=(-0.2,), width=2.0))
        self.s = SpinorField(first, second * 0.5j)

    def test_spinor_inverse(self):
        """Test that the spinor boost is inverted exactly."""
        boost = BoostSpec(velocity=(2 * self.step,), time=1.4)
        back = galilei_spinor_inverse(galilei_spinor(self.s, boost), boost)
        np.testing.assert_allclose(back.values, self.s.values, atol=1e-12)

    def test_second_component_is_conjugated(self):
        """Test G(t)(psi_1, psi_2) = (g psi_1, conj(g conj(psi_2)))."""
        boost = BoostSpec(velocity=(self.step,), time=0.8)
        boosted = galilei_spinor(self.s, boost)
        expected = galilei(self.s.second.conj(), boost).conj()
        np.testing.assert_allclose(boosted.second.values, expected.values, atol=1e-14)

    def test_modulation(self):
        """Test the modulation phases and their inverse."""
        first, second = modulation_phases(1.5, 0.3, 2.0)
        self.assertAlmostEqual(first * second, 1.0)
        self.assertAlmostEqual(first, np.exp(-0.5j * (1.5 ** 2 * 2.0 + 0.3)))
        back = modulation_inverse(1.5, 0.3, 2.0, modulation(1.5, 0.3, 2.0, self.s))
        np.testing.assert_allclose(back.values, self.s.values, atol=1e-14)


if __name__ == '__main__':
    unittest.main()
