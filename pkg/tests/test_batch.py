"""
Test suite for batch execution.
"""

import time
import unittest

from dispersim.core.batch import BatchRunner, Job
from dispersim.core.exceptions import DispersimError, FitError, NearThresholdError
from dispersim.core.fieldgrid import make_grid
from dispersim.core.model import ChargeTransferModel, PotentialSpec
from dispersim.core.spectral import bound_states


def _delayed_square(value, delay=0.0):
    time.sleep(delay)
    return value * value


def _fail_with_fit_error():
    raise FitError("no decay")


def _fail_with_value_error():
    raise ValueError("bad value")


class TestBatchRunner(unittest.TestCase):
    """Test cases for BatchRunner."""

    def setUp(self):
        """Set up test fixtures."""
        self.runner = BatchRunner(max_workers=4)

    def test_results_in_submission_order(self):
        """Test that results follow the job order, not completion order."""
        jobs = [Job(f"square[{i}]", _delayed_square, (i,), {'delay': 0.02 * (5 - i)}) for i in range(5)]
        results = self.runner.run(jobs)

        self.assertEqual([r['name'] for r in results], [job.name for job in jobs])
        self.assertEqual([r['value'] for r in results], [0, 1, 4, 9, 16])
        self.assertTrue(all(r['status'] == 'success' for r in results))

    def test_errors_captured(self):
        """Test that a failing job does not stop the others."""
        jobs = [Job('ok', _delayed_square, (3,)), Job('fails', _fail_with_value_error)]
        results = self.runner.run(jobs)

        self.assertEqual(results[0]['value'], 9)
        self.assertEqual(results[1]['status'], 'error')
        self.assertIsInstance(results[1]['error'], ValueError)

    def test_progress_callback(self):
        """Test progress reporting."""
        calls = []
        self.runner.run([Job(str(i), _delayed_square, (i,)) for i in range(3)],
                        progress_callback=lambda done, total, result: calls.append((done, total)))

        self.assertEqual(sorted(calls), [(1, 3), (2, 3), (3, 3)])

    def test_raise_first_error(self):
        """Test re-raising of job failures."""
        results = self.runner.run([Job('fit', _fail_with_fit_error)])
        with self.assertRaises(FitError):
            BatchRunner.raise_first_error(results)

        results = self.runner.run([Job('value', _fail_with_value_error)])
        with self.assertRaises(DispersimError) as context:
            BatchRunner.raise_first_error(results)
        self.assertIsInstance(context.exception.__cause__, ValueError)

        BatchRunner.raise_first_error(self.runner.run([Job('ok', _delayed_square, (2,))]))

    def test_scan(self):
        """Test a parameter scan."""
        results = self.runner.scan(_delayed_square, [1, 2, 3], delay=0.0)

        self.assertEqual([r['value'] for r in results], [1, 4, 9])
        self.assertEqual(results[0]['name'], '_delayed_square[1]')

    def test_worker_count(self):
        """Test worker count normalization."""
        self.assertEqual(BatchRunner(0).max_workers, 1)
        self.assertEqual(BatchRunner(3).max_workers, 3)


class TestSolveFamilies(unittest.TestCase):
    """Test cases for concurrent bound state solves."""

    def setUp(self):
        """Set up test fixtures."""
        self.grid = make_grid(1, 256, 40.0)
        self.well = PotentialSpec(depth=1.0, width=1.0)
        self.free = PotentialSpec(depth=0.0, width=1.0, center=(5.0,))

    def test_solve_families(self):
        """Test that every channel is solved and labelled."""
        model = ChargeTransferModel((self.well, self.free), self.grid)
        families = BatchRunner(max_workers=2).solve_families(model, k_max=1)

        self.assertEqual([family.channel for family in families], [0, 1])
        self.assertEqual(len(families[1]), 0)

        direct = bound_states(self.well, self.grid, k_max=1)
        self.assertAlmostEqual(families[0].eigenvalues[0], direct.eigenvalues[0], places=8)

    def test_solve_failure_keeps_type(self):
        """Test that a near-threshold failure surfaces as itself."""
        model = ChargeTransferModel((self.well,), self.grid)
        with self.assertRaises(NearThresholdError):
            BatchRunner().solve_families(model, k_max=1, gap_tol=5.0)


if __name__ == '__main__':
    unittest.main()
