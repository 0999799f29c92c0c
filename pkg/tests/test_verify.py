"""
Test suite for decay fits and estimate reports.
"""

import math
import os
import unittest
from unittest.mock import patch

import numpy as np

from dispersim.core.exceptions import ConfigurationError, FitError, InsufficientDataError
from dispersim.core.fieldgrid import AdmissiblePair, SpinorField, WavePacket, gaussian_packet, make_grid, random_band_limited_field
from dispersim.core.model import ChargeTransferModel, MatrixPotentialSpec, PotentialSpec
from dispersim.core.propagate import Trajectory, evolve, lp_observers
from dispersim.core.spectral import bound_states, moving_bound_state, prepare_scattering_state
from dispersim.core.verify import (
    HARD_FLAGS,
    asymptotic_decomposition,
    bound_overlap_observer,
    default_stride,
    dispersive_report,
    energy_report,
    fit_exponential_decay,
    fit_power_decay,
    kato_smoothing_report,
    matrix_conjugacy_report,
    matrix_stability_report,
    orthogonality_decay_report,
    sobolev_observers,
    strichartz_grid_comparison,
    strichartz_report,
    unitarity_report,
    weighted_curve_report,
    weighted_operator_report,
)

SLOW = os.environ.get('DISPERSIM_SLOW') == '1'


def synthetic_trajectory(times, norms=None, **series):
    """Trajectory without snapshots carrying the given observer series."""
    times = np.asarray(times, dtype=float)
    norms = np.ones(len(times)) if norms is None else np.asarray(norms, dtype=float)
    return Trajectory(grid=make_grid(1, 16, 10.0), times=times, snapshots=[], norms=norms,
                      shell_mass=np.zeros(len(times)), dt=float(times[1] - times[0]),
                      series={key.replace('_', ':'): np.asarray(v, dtype=float) for key, v in series.items()})


class TestFits(unittest.TestCase):
    """Test cases for power-law and exponential fits."""

    def test_power_decay(self):
        """Test recovery of an exact power law."""
        t = np.linspace(1.0, 10.0, 40)
        fit = fit_power_decay(np.column_stack([t, 2.0 * t ** -1.5]))
        self.assertAlmostEqual(fit.exponent, -1.5, places=10)
        self.assertAlmostEqual(fit.r_squared, 1.0, places=10)
        windowed = fit_power_decay(np.column_stack([t, 2.0 * t ** -1.5]), (2.0, 5.0))
        self.assertGreaterEqual(windowed.window[0], 2.0)
        self.assertLessEqual(windowed.window[1], 5.0)

    def test_exponential_decay(self):
        """Test recovery of an exact exponential."""
        t = np.linspace(0.0, 5.0, 30)
        fit = fit_exponential_decay(np.column_stack([t, 3.0 * np.exp(-0.7 * t)]))
        self.assertAlmostEqual(fit.rate, 0.7, places=10)
        self.assertEqual(fit.to_dict()['model'], 'exponential')

    def test_planted_noisy_exponents(self):
        """Test recovery of planted exponents from multiplicatively noisy data."""
        rng = np.random.default_rng(5)
        t = np.linspace(1.0, 20.0, 100)
        for exponent in (-0.5, -1.0, -1.5):
            with self.subTest(exponent=exponent):
                noisy = 2.0 * t ** exponent * np.exp(rng.normal(0.0, 0.02, t.size))
                fit = fit_power_decay(np.column_stack([t, noisy]))
                self.assertAlmostEqual(fit.exponent, exponent, delta=0.03)

    def test_fit_errors(self):
        """Test the data requirements of the fits."""
        t = np.linspace(1.0, 2.0, 4)
        with self.assertRaises(InsufficientDataError):
            fit_power_decay(np.column_stack([t, t]))
        t = np.linspace(1.0, 2.0, 10)
        with self.assertRaises(FitError):
            fit_power_decay(np.column_stack([t, -t]))
        with self.assertRaises(FitError):
            fit_power_decay(np.column_stack([t - 1.0, t]))
        with self.assertRaises(InsufficientDataError):
            fit_power_decay(np.column_stack([t, t]), (3.0, 2.0))

    def test_default_stride(self):
        """Test that the stride divides the step count."""
        for steps, expected in [(1000, 5), (7, 1), (40000, 200), (1002, 3)]:
            with self.subTest(steps=steps):
                self.assertEqual(default_stride(steps), expected)


class TestFreeEstimates(unittest.TestCase):
    """Test cases for estimates measured on the free flow."""

    @classmethod
    def setUpClass(cls):
        """Run a one-dimensional free Gaussian once."""
        cls.grid = make_grid(1, 1024, 160.0)
        cls.psi0 = gaussian_packet(cls.grid, WavePacket(width=1.0))
        cls.model = ChargeTransferModel((), cls.grid)
        observers = dict(lp_observers([math.inf, 4.0]))
        observers.update(sobolev_observers([1]))
        cls.traj = evolve(cls.model, cls.psi0, 0.0, 16.0, 0.01, stride=8, store=True, observers=observers)

    def test_dispersive_exponent(self):
        """Test the t^{-1/2} sup-norm decay in one dimension."""
        report = dispersive_report(self.model, self.psi0, 16.0, 0.01, trajectory=self.traj)
        self.assertAlmostEqual(report.values['exponent'], -0.5, delta=0.05)
        self.assertNotIn('non_decaying', report.flags)
        self.assertEqual(report.to_dict()['metric'], 'dispersive')

    def test_dispersive_refinement(self):
        """Test that the exact free flow is refinement consistent."""
        report = dispersive_report(None, self.psi0, 16.0, 0.01, refine=True)
        self.assertLess(report.refinement_delta, 1e-6)
        self.assertNotIn('unconverged', report.flags)

    def test_unitarity(self):
        """Test the drift of an exactly unitary flow."""
        report = unitarity_report(self.traj)
        self.assertLess(report.values['drift_per_unit_time'], 1e-12)
        self.assertEqual(report.flags, [])

    def test_strichartz(self):
        """Test bounded Strichartz ratios for the free flow."""
        pairs = [AdmissiblePair(math.inf, 2, 1), AdmissiblePair(8, 4, 1)]
        report = strichartz_report(self.traj, pairs)
        self.assertAlmostEqual(report.values['ratios']['(inf,2)'], 1.0)
        self.assertGreater(report.values['ratios']['(8,4)'], 0.0)
        self.assertNotIn('divergent', report.flags)

    def test_strichartz_grid_comparison(self):
        """Test that resolved finite-p ratios agree on N and 2N points."""
        grid = make_grid(1, 128, 80.0)
        pairs = [AdmissiblePair(math.inf, 2, 1), AdmissiblePair(8, 4, 1)]
        values = strichartz_grid_comparison(None, grid, WavePacket(width=2.0), pairs, 8.0, 0.01, 256)
        self.assertEqual(values['grid_points'], [128, 256])
        self.assertEqual(list(values['grid_ratios']), ['(8,4)'])
        self.assertLess(values['grid_delta'], 1e-6)
        with self.assertRaises(ConfigurationError):
            strichartz_grid_comparison(None, grid, WavePacket(width=2.0), pairs[:1], 8.0, 0.01, 256)

    def test_energy(self):
        """Test that the H^1 norm is conserved by the free flow."""
        report = energy_report(self.traj, k=1)
        self.assertAlmostEqual(report.values['growth_ratio'], 1.0, places=8)
        self.assertNotIn('energy_growth', report.flags)

    def test_decomposition_of_free_wave(self):
        """Test that a free wave is its own free profile."""
        report = asymptotic_decomposition(self.model, self.traj, [])
        self.assertLess(report.to_dict()['values']['max_residual'], 1e-10)
        self.assertEqual(report.free_flow_sign, '-')
        self.assertNotIn('residual_not_decaying', report.flags)

    def test_weighted_operator(self):
        """Test decay of the weighted free propagator."""
        report = weighted_operator_report(None, self.grid, 0.0, 0.0, 2.0, 16.0, 0.05, trials=2)
        self.assertLess(report.values['exponent'], -0.2)
        self.assertEqual(len(report.values['trial_exponents']), 2)
        with self.assertRaises(ConfigurationError):
            weighted_operator_report(None, self.grid, 0.0, 0.0, 0.4, 16.0, 0.05)

    def test_weighted_curve(self):
        """Test saturation along a fixed curve and growth along the packet."""
        packet = gaussian_packet(self.grid, WavePacket(momentum=(3.0,), width=2.0))
        report = weighted_curve_report(None, packet, 'origin', 1.0, 16.0, 0.05)
        self.assertLess(report.values['late_increment_fraction'], 0.05)
        self.assertNotIn('not_saturated', report.flags)
        comoving = weighted_curve_report(None, packet, 'comoving', 1.0, 16.0, 0.05, velocity=(3.0,))
        self.assertIn('not_saturated', comoving.flags)

    def test_kato_smoothing(self):
        """Test saturation of the local smoothing integral."""
        u = gaussian_packet(self.grid, WavePacket(momentum=(1.0,), width=1.0))
        report = kato_smoothing_report(u, 1.0, 40.0, 0.1, refine=True)
        self.assertLess(report.values['late_increment_fraction'], 0.05)
        self.assertNotIn('unconverged', report.flags)
        with self.assertRaises(ConfigurationError):
            kato_smoothing_report(u, 0.5, 1.0, 0.1)


class TestLateStart(unittest.TestCase):
    """Test cases for runs that do not start at t = 0."""

    def setUp(self):
        """Set up a moving well so that the start time matters."""
        self.grid = make_grid(1, 1024, 160.0)
        v = (2 * 2.0 * math.pi / 160.0,)
        self.model = ChargeTransferModel((PotentialSpec(depth=1.0, center=(-20.0,), velocity=v),), self.grid)
        self.psi0 = gaussian_packet(self.grid, WavePacket(width=1.0))

    def test_refinement_reruns_the_same_interval(self):
        """Test that the coarse rerun starts where the trajectory starts."""
        traj = evolve(self.model, self.psi0, 2.0, 10.0, 0.01, stride=8, observers=lp_observers([math.inf]))
        with patch('dispersim.core.verify.evolve', wraps=evolve) as wrapped:
            report = dispersive_report(self.model, self.psi0, 8.0, 0.01, refine=True, trajectory=traj, t0=2.0)

        self.assertEqual(wrapped.call_count, 1)
        args = wrapped.call_args[0]
        self.assertEqual(args[2], 2.0)
        self.assertAlmostEqual(args[3], 10.0)
        self.assertAlmostEqual(args[4], 0.02)
        self.assertLess(report.refinement_delta, 0.1)
        self.assertNotIn('unconverged', report.flags)

    def test_own_run_starts_at_t0(self):
        """Test that a report without a trajectory propagates from t0."""
        with patch('dispersim.core.verify.evolve', wraps=evolve) as wrapped:
            report = dispersive_report(self.model, self.psi0, 4.0, 0.01, t0=3.0)

        self.assertEqual(wrapped.call_args[0][2], 3.0)
        self.assertAlmostEqual(report.window[1], 4.0)


class TestSyntheticReports(unittest.TestCase):
    """Test cases for flags raised on synthetic histories."""

    def setUp(self):
        """Set up test fixtures."""
        self.times = np.linspace(0.0, 10.0, 101)
        self.model = ChargeTransferModel((), make_grid(1, 16, 10.0))

    def test_norm_drift(self):
        """Test that a drifting norm is flagged."""
        traj = synthetic_trajectory(self.times, norms=1.0 + 1e-3 * self.times)
        report = unitarity_report(traj, tolerance=1e-6)
        self.assertIn('norm_drift', report.hard_flags)

    def test_divergent_strichartz(self):
        """Test that a growing space norm is flagged divergent."""
        traj = synthetic_trajectory(self.times, lp_4=1.0 + self.times)
        report = strichartz_report(traj, [AdmissiblePair(8, 4, 1)])
        self.assertIn('divergent', report.flags)

    def test_energy_growth(self):
        """Test that growing H^1 norms are flagged."""
        traj = synthetic_trajectory(self.times, hk_1=1.0 + self.times)
        self.assertIn('energy_growth', energy_report(traj, k=1).flags)

    def test_orthogonality_decay(self):
        """Test the exponential rate of the bound overlap."""
        traj = synthetic_trajectory(self.times, beta=np.exp(-0.5 * self.times))
        report = orthogonality_decay_report(self.model, traj, [])
        self.assertAlmostEqual(report.values['alpha'], 0.5, places=8)
        self.assertEqual(report.flags, [])

    def test_already_orthogonal(self):
        """Test overlaps below the floor."""
        traj = synthetic_trajectory(self.times, beta=np.full(101, 1e-14))
        report = orthogonality_decay_report(self.model, traj, [])
        self.assertIn('already_orthogonal', report.flags)
        self.assertIsNone(report.values['alpha'])

    def test_noise_below_tolerance_is_orthogonal(self):
        """Test that round-off overlaps below tolerance * ||psi_0|| are not fitted."""
        beta = 1e-8 * (1.0 + 0.5 * np.sin(3.0 * self.times)) * (1.0 + 0.1 * self.times)
        report = orthogonality_decay_report(self.model, synthetic_trajectory(self.times, beta=beta), [])
        self.assertIn('already_orthogonal', report.flags)
        self.assertAlmostEqual(report.values['floor'], 1e-6)
        self.assertIsNone(report.values['alpha'])

    def test_fit_stops_at_floor(self):
        """Test that the fit ends where the overlap reaches the noise floor."""
        beta = np.exp(-2.0 * self.times) + 1e-9 * np.abs(np.sin(self.times))
        traj = synthetic_trajectory(self.times, beta=beta)
        for tolerance, end in [(1e-6, 7.0), (1e-3, 3.5)]:
            with self.subTest(tolerance=tolerance):
                report = orthogonality_decay_report(self.model, traj, [], tolerance=tolerance)
                self.assertAlmostEqual(report.values['alpha'], 2.0, delta=1e-2)
                self.assertLess(report.window[1], end)
                self.assertNotIn('non_decaying', report.flags)

    def test_non_decaying_overlap(self):
        """Test that a constant overlap is flagged."""
        traj = synthetic_trajectory(self.times, beta=np.full(101, 0.3))
        report = orthogonality_decay_report(self.model, traj, [])
        self.assertIn('non_decaying', report.hard_flags)

    def test_hard_flags(self):
        """Test that soft flags are not hard."""
        self.assertNotIn('unconverged', HARD_FLAGS)
        self.assertNotIn('boundary_contaminated', HARD_FLAGS)


class TestBoundDecomposition(unittest.TestCase):
    """Test cases for the decomposition of bound solutions."""

    @classmethod
    def setUpClass(cls):
        """Solve a moving well once."""
        cls.grid = make_grid(1, 256, 40.0)
        cls.v = (2 * 2.0 * math.pi / 40.0,)
        cls.model = ChargeTransferModel((PotentialSpec(depth=1.0, velocity=cls.v),), cls.grid)
        cls.family = bound_states(cls.model.potentials[0], cls.grid, k_max=1)

    def test_bound_coefficient(self):
        """Test that a carried bound state has coefficient equal to its amplitude."""
        psi0 = moving_bound_state(self.family.states[0], self.v, 0.0) * 0.6
        traj = evolve(self.model, psi0, 0.0, 2.0, 0.001, stride=100)
        report = asymptotic_decomposition(self.model, traj, [self.family])
        self.assertAlmostEqual(abs(report.A[0]), 0.6, delta=1e-3)
        self.assertEqual(report.B, [])
        self.assertLess(report.to_dict()['values']['max_residual'], 1e-3)

    def test_requires_snapshots(self):
        """Test that the decomposition needs stored snapshots."""
        psi0 = moving_bound_state(self.family.states[0], self.v, 0.0)
        traj = evolve(self.model, psi0, 0.0, 0.1, 0.01, store=False)
        with self.assertRaises(InsufficientDataError):
            asymptotic_decomposition(self.model, traj, [self.family])


class TestTwoWellOverlap(unittest.TestCase):
    """Test cases on close reflectionless wells that separate at constant speed."""

    @classmethod
    def setUpClass(cls):
        """Prepare a scattering packet between the wells and run it to t = 40."""
        cls.grid = make_grid(1, 1024, 160.0)
        cls.v = (10 * 2.0 * math.pi / 160.0,)
        cls.model = ChargeTransferModel((
            PotentialSpec(shape='sech2', depth=1.0, width=1.0, center=(-2.0,), velocity=(0.0,)),
            PotentialSpec(shape='sech2', depth=1.0, width=1.0, center=(2.0,), velocity=cls.v),
        ), cls.grid)
        cls.families = [bound_states(spec, cls.grid, k_max=1, channel=j)
                        for j, spec in enumerate(cls.model.potentials)]
        prepared = prepare_scattering_state(WavePacket(center=(0.0,), width=1.5), cls.model, cls.families,
                                            horizon=30.0, dt=0.001)
        cls.psi0 = prepared.field
        cls.traj = evolve(cls.model, cls.psi0, 0.0, 40.0, 0.001, stride=200,
                          observers=bound_overlap_observer(cls.model, cls.families))

    def test_prepared_overlap_decays(self):
        """Test the exponential decay of the bound overlap of prepared data."""
        report = orthogonality_decay_report(self.model, self.traj, self.families)
        self.assertGreater(report.values['max_beta'], 1e-3)
        self.assertGreater(report.values['alpha'], 0.05)
        self.assertGreater(report.values['r_squared'], 0.9)
        self.assertNotIn('non_decaying', report.flags)
        self.assertNotIn('already_orthogonal', report.flags)

    def test_bound_state_keeps_overlap(self):
        """Test that the resting bound state is flagged non-decaying."""
        psi0 = self.families[0].states[0].function
        traj = evolve(self.model, psi0, 0.0, 10.0, 0.001, stride=200,
                      observers=bound_overlap_observer(self.model, self.families))
        report = orthogonality_decay_report(self.model, traj, self.families)
        self.assertGreater(min(traj.series['beta']), 0.9)
        self.assertIn('non_decaying', report.hard_flags)

    def test_unitarity(self):
        """Test the L^2 drift over [0, 40] at dt = 1e-3."""
        report = unitarity_report(self.traj, tolerance=1e-6)
        self.assertLess(report.values['drift_per_unit_time'], 1e-6)
        self.assertNotIn('norm_drift', report.flags)

    def test_energy_bounded(self):
        """Test that the H^1 and H^2 norms do not grow late in the run."""
        for k in (1, 2):
            with self.subTest(k=k):
                report = energy_report(self.traj, k=k)
                self.assertLessEqual(report.values['growth_ratio'], 1.05)
                self.assertNotIn('energy_growth', report.flags)

    def test_decomposition_of_scattering_data(self):
        """Test that prepared data leave no bound part and a vanishing remainder."""
        report = asymptotic_decomposition(self.model, self.traj, self.families)
        self.assertLess(max(abs(c) for c in report.A + report.B), 0.05)
        self.assertLess(report.residual_norms[-1], 0.05 * self.traj.norms[0])
        self.assertTrue(report.decreasing)
        self.assertNotIn('residual_not_decaying', report.flags)

    def test_weighted_curves_saturate(self):
        """Test saturation along the resting well and along x(t) = t v."""
        packet = gaussian_packet(self.grid, WavePacket(center=(-10.0,), momentum=(2.0,), width=2.0))
        for curve in ('origin', 'comoving'):
            with self.subTest(curve=curve):
                report = weighted_curve_report(self.model, packet, curve, 1.0, 40.0, 0.01, velocity=self.v)
                self.assertLess(report.values['late_increment_fraction'], 0.05)
                self.assertNotIn('not_saturated', report.flags)


class TestMatrixReports(unittest.TestCase):
    """Test cases for the matrix conjugacy and stability checks."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = make_grid(1, 128, 40.0)
        rng = np.random.default_rng(11)
        self.s0 = SpinorField(random_band_limited_field(self.grid, rng), random_band_limited_field(self.grid, rng))

    def test_conjugacy(self):
        """Test that the moving flow is conjugate to the stationary one."""
        spec = MatrixPotentialSpec(u=PotentialSpec(depth=1.0), w=PotentialSpec(depth=0.3),
                                   alpha=1.5, gamma=0.3, velocity=(2 * 2.0 * math.pi / 40.0,))
        report = matrix_conjugacy_report(spec, self.s0, 0.4, 0.001)
        self.assertEqual(len(report.values['discrepancies']), 3)
        self.assertLess(report.values['max_discrepancy'], 1e-6)
        self.assertNotIn('conjugacy_violated', report.flags)

    def test_stability_flags_instability(self):
        """Test that an unstable operator is flagged."""
        spec = MatrixPotentialSpec(u=PotentialSpec(depth=0.0), w=PotentialSpec(depth=20.0, width=3.0), alpha=1.0)
        report = matrix_stability_report(spec, [], self.s0, 2.0, 0.001)
        self.assertIn('instability', report.hard_flags)
        with self.assertRaises(ConfigurationError):
            matrix_stability_report(spec, None, self.s0, 2.0, 0.001)

    def test_stability_without_potential(self):
        """Test that the kinetic matrix flow keeps the norm."""
        spec = MatrixPotentialSpec(u=PotentialSpec(depth=0.0), w=PotentialSpec(depth=0.0), alpha=1.0)
        report = matrix_stability_report(spec, [], self.s0, 1.0, 0.01)
        self.assertAlmostEqual(report.values['sup_ratio'], 1.0, places=10)
        self.assertEqual(report.flags, [])


@unittest.skipUnless(SLOW, "set DISPERSIM_SLOW=1 for three-dimensional runs")
class TestThreeDimensional(unittest.TestCase):
    """Three-dimensional estimate checks."""

    def test_free_dispersive_exponent(self):
        """Test the t^{-3/2} sup-norm decay in three dimensions."""
        grid = make_grid(3, 128, 128.0)
        psi0 = gaussian_packet(grid, WavePacket(width=1.0))
        report = dispersive_report(None, psi0, 12.0, 0.05, t_min=4.0)
        self.assertAlmostEqual(report.values['exponent'], -1.5, delta=0.15)

    def test_kato_smoothing(self):
        """Test saturation of the local smoothing integral in three dimensions."""
        grid = make_grid(3, 64, 128.0)
        u = gaussian_packet(grid, WavePacket(width=2.0))
        report = kato_smoothing_report(u, 1.0, 20.0, 0.1)
        self.assertLess(report.values['late_increment_fraction'], 0.05)


if __name__ == '__main__':
    unittest.main()
