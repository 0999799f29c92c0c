"""
Batch execution of independent numerical jobs.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

from .exceptions import DispersimError
from .model import ChargeTransferModel
from .spectral import GAP_TOL, SpectralFamily, bound_states

logger = logging.getLogger(__name__)


@dataclass
class Job:
    """One unit of work: a callable with its arguments."""

    name: str
    function: Callable[..., Any]
    args: Sequence[Any] = ()
    kwargs: Dict[str, Any] = field(default_factory=dict)


class BatchRunner:
    """
    Runs independent jobs (per-channel eigensolves, trial sets, parameter
    scans) on a thread pool. FFT and LAPACK calls release the GIL.
    """

    def __init__(self, max_workers: int = 1):
        """
        Args:
            max_workers: Maximum number of parallel workers
        """
        self.max_workers = max(1, int(max_workers))

    def run(self, jobs: Sequence[Job], progress_callback: Optional[Callable] = None) -> List[Dict]:
        """
        Execute jobs in parallel.

        Args:
            jobs: Jobs to run
            progress_callback: Optional callback(done, total, result)

        Returns:
            One result dict per job, in submission order, with keys
            name, status ('success' or 'error'), value and error
        """
        results: List[Optional[Dict]] = [None] * len(jobs)

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            future_to_index = {
                executor.submit(job.function, *job.args, **job.kwargs): i
                for i, job in enumerate(jobs)
            }

            for done, future in enumerate(as_completed(future_to_index)):
                index = future_to_index[future]
                job = jobs[index]
                try:
                    result = {'name': job.name, 'status': 'success', 'value': future.result(), 'error': None}
                except Exception as e:
                    logger.debug("Job %s failed: %s", job.name, e)
                    result = {'name': job.name, 'status': 'error', 'value': None, 'error': e}

                results[index] = result

                if progress_callback:
                    progress_callback(done + 1, len(jobs), result)

        return results

    @staticmethod
    def raise_first_error(results: Sequence[Dict]) -> None:
        """Re-raise the first failed job's exception (simulator errors keep their type)."""
        for result in results:
            if result['status'] == 'error':
                error = result['error']
                if isinstance(error, DispersimError):
                    raise error
                raise DispersimError(f"Job {result['name']} failed: {error}") from error

    def solve_families(self, model: ChargeTransferModel, k_max: int = 2, tol: float = 1e-6,
                       gap_tol: float = GAP_TOL, seed: int = 0) -> List[SpectralFamily]:
        """Bound states of every channel, solved concurrently."""
        jobs = [
            Job(f"bound_states[{j}]", bound_states, (spec, model.grid),
                {'k_max': k_max, 'tol': tol, 'gap_tol': gap_tol, 'seed': seed, 'channel': j})
            for j, spec in enumerate(model.potentials)
        ]
        results = self.run(jobs)
        self.raise_first_error(results)
        return [result['value'] for result in results]

    def scan(self, function: Callable[..., Any], values: Sequence[Any], **kwargs) -> List[Dict]:
        """Evaluate function(value, **kwargs) for every value of a parameter scan."""
        jobs = [Job(f"{getattr(function, '__name__', 'job')}[{value}]", function, (value,), kwargs)
                for value in values]
        return self.run(jobs)
