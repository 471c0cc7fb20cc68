"""Shared fixtures: worker count and a session-wide cache of batch runs.

The heavy experiments are requested by several acceptance criteria; the
cache computes each (n, k, a, M, seed) batch once per session and records
its wall time so criteria with runtime budgets can assert against the cost
of exactly the experiments they require.
"""

import os
import time

import pytest

from amsplit import make_distribution, run_ams_batch


def _worker_count() -> int:
    raw = os.environ.get("AMSPLIT_WORKERS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return max(1, min(4, os.cpu_count() or 1))


@pytest.fixture(scope="session")
def workers() -> int:
    return _worker_count()


class BatchCache:
    def __init__(self, workers: int):
        self.workers = workers
        self._store = {}
        self.elapsed = {}

    def batch(self, dist_name, n, k, a, num_runs, master_seed):
        key = (dist_name, n, k, a, num_runs, master_seed)
        if key not in self._store:
            start = time.perf_counter()
            self._store[key] = run_ams_batch(
                make_distribution(dist_name), n=n, k=k, a=a, num_runs=num_runs,
                master_seed=master_seed, workers=self.workers,
            )
            self.elapsed[key] = time.perf_counter() - start
        return self._store[key]

    def exponential_batch(self, n, k, a, num_runs, master_seed):
        return self.batch("exponential", n, k, a, num_runs, master_seed)

    def seconds(self, dist_name, n, k, a, num_runs, master_seed) -> float:
        return self.elapsed[(dist_name, n, k, a, num_runs, master_seed)]


@pytest.fixture(scope="session")
def batch_cache(workers) -> BatchCache:
    return BatchCache(workers)
