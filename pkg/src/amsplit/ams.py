"""Adaptive multilevel splitting over a replica ensemble.

The algorithm keeps n replicas distributed above the current level, kills
the k smallest at each iteration, and resamples them from the conditional
law above the k-th order statistic.  It stops once the k-th order statistic
reaches the threshold ``a``; the tail probability estimate is

    p_hat = C * (1 - k/n)**J,

where J counts resampling iterations and the corrector C is the fraction of
replicas at or above ``a`` at termination.  The estimator is unbiased for
every (n, k) in the idealized setting (exact conditional sampling).

Two interchangeable execution paths are provided: :func:`run_ams` drives
the compiled heap kernel (production path, also used by the batch runner),
while :func:`run_ams_reference` is a literal sorted-ensemble transcription
kept as a testing oracle.  Both consume uniforms in the same order from the
same stream and agree run for run.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _engine
from .sampling import (
    DistributionModel,
    DomainError,
    RngStream,
    _checked_cdf_at,
    _conditional_from_uniforms,
    make_distribution,
)

__all__ = [
    "InvalidParams",
    "IterationCapExceeded",
    "AmsParams",
    "AmsResult",
    "ReplicaEnsemble",
    "run_ams",
    "run_ams_reference",
    "expected_iterations",
    "run_ams_batch",
    "BatchResult",
]


class InvalidParams(ValueError):
    """Run configuration violates the algorithm's preconditions."""


class IterationCapExceeded(RuntimeError):
    """The iteration cap was hit or levels stopped increasing.

    Under a continuous CDF the level sequence is strictly increasing and
    terminates in finite time almost surely, so this signals an effectively
    degenerate or non-continuous input.
    """


def _default_cap(n: int, k: int, a: float, x: float) -> int:
    # ~20x the asymptotic mean iteration count n*(a-x)/k, floored at 20n/k
    return math.ceil(20.0 * n * max(a - x, 1.0) / k) + 100


@dataclass
class AmsParams:
    """Configuration of one splitting run.

    ``n`` replicas, ``k`` killed per iteration (1 <= k <= n-1), threshold
    ``a``, initial level ``x`` (the run estimates P(X > a | X > x)), an
    optional iteration cap, and the random stream for this run.
    """

    n: int
    k: int
    a: float
    x: float = 0.0
    max_iterations: Optional[int] = None
    seed: RngStream = field(default_factory=lambda: RngStream(0, 0))

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise InvalidParams(f"need integer n >= 2, got {self.n}")
        if int(self.k) != self.k or not 1 <= self.k <= self.n - 1:
            raise InvalidParams(f"need 1 <= k <= n-1, got k={self.k}, n={self.n}")
        if not (math.isfinite(self.a) and math.isfinite(self.x)):
            raise InvalidParams(f"a and x must be finite, got a={self.a}, x={self.x}")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise InvalidParams(f"max_iterations must be >= 1, got {self.max_iterations}")

    @property
    def iteration_cap(self) -> int:
        if self.max_iterations is not None:
            return int(self.max_iterations)
        return _default_cap(self.n, self.k, self.a, self.x)


@dataclass
class AmsResult:
    """Outcome of one run: J, corrector, estimate, optional level trace."""

    iterations: int
    corrector: float
    estimate: float
    seed: RngStream
    n: int
    k: int
    levels: Optional[tuple] = None

    @staticmethod
    def from_termination(
        iterations: int,
        count_at_or_above: int,
        params: AmsParams,
        levels: Optional[tuple] = None,
    ) -> "AmsResult":
        corrector = count_at_or_above / params.n
        estimate = corrector * (1.0 - params.k / params.n) ** iterations
        return AmsResult(
            iterations=iterations,
            corrector=corrector,
            estimate=estimate,
            seed=RngStream(params.seed.master_seed, params.seed.stream_index),
            n=params.n,
            k=params.k,
            levels=levels,
        )


class ReplicaEnsemble:
    """Sorted multiset of replica values with deterministic tie order.

    Values are kept ascending by (value, insertion index); the insertion
    index makes the kill set well defined even if floats collide (ties have
    probability zero under a continuous CDF, but not in binary64).  Used by
    the reference path; the compiled kernel uses a heap with the same
    observable behaviour.
    """

    def __init__(self, values: Sequence[float]):
        values = np.asarray(values, dtype=float)
        ids = np.arange(values.size)
        order = np.lexsort((ids, values))
        self._values = values[order]
        self._ids = ids[order]
        self._next_id = values.size

    @property
    def size(self) -> int:
        return self._values.size

    @property
    def values(self) -> np.ndarray:
        return self._values.copy()

    def kth_smallest(self, k: int) -> float:
        return float(self._values[k - 1])

    def replace_k_smallest(self, new_values: Sequence[float]) -> None:
        """Kill the k smallest entries and batch-merge k new values."""
        new_values = np.asarray(new_values, dtype=float)
        k = new_values.size
        new_ids = self._next_id + np.arange(k)
        self._next_id += k
        order = np.lexsort((new_ids, new_values))
        nv, ni = new_values[order], new_ids[order]
        surv_v, surv_i = self._values[k:], self._ids[k:]
        # new ids exceed all survivor ids, so ties insert after equals
        pos = np.searchsorted(surv_v, nv, side="right")
        self._values = np.insert(surv_v, pos, nv)
        self._ids = np.insert(surv_i, pos, ni)

    def count_at_or_above(self, a: float) -> int:
        return int(self.size - np.searchsorted(self._values, a, side="left"))


def expected_iterations(n: int, k: int, p: float) -> float:
    """Asymptotic (large-n) mean number of iterations, -n log(p) / k.

    This is the leading order of E[J], not an exact value at finite n.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")
    return -n * math.log(p) / k


def _engine_coordinates(params: AmsParams, dist: DistributionModel):
    """Map (x, a) into kernel coordinates; returns (mode, level0, threshold)."""
    if dist.recipe is not None and dist.recipe[0] == "exponential":
        return _engine.MODE_SHIFT, params.x, params.a
    w_x = _checked_cdf_at(dist, params.x)
    w_a = _checked_cdf_at(dist, params.a)
    return _engine.MODE_USPACE, w_x, w_a


def _reference_draws(dist: DistributionModel, level: float, u: np.ndarray) -> np.ndarray:
    """Conditional draws for the reference path, bit-matching the kernel.

    The memoryless branch goes through scalar libm log1p (what the compiled
    kernel uses); numpy's vectorized log1p may differ by one ulp.
    """
    if dist.recipe is not None and dist.recipe[0] == "exponential":
        floor = _engine._MIN_UNIFORM
        return np.array([level - math.log1p(-max(v, floor)) for v in u])
    return _conditional_from_uniforms(dist, level, u)


def run_ams(
    params: AmsParams, dist: DistributionModel, record_levels: bool = False
) -> AmsResult:
    """Run the splitting algorithm once and return its estimate.

    Raises :class:`IterationCapExceeded` if the run exceeds the iteration
    cap or produces a non-increasing level (degenerate input), and
    :class:`InvalidParams` / :class:`DomainError` on bad configuration.
    A run with x >= a returns the trivial estimate 1 without sampling.
    """
    if params.x >= params.a:
        return AmsResult.from_termination(0, params.n, params,
                                          levels=() if record_levels else None)
    mode, level0, threshold = _engine_coordinates(params, dist)
    cap = params.iteration_cap
    trace = np.empty(cap + 2) if record_levels else np.empty(0)
    gen = params.seed.generator
    status, iterations, count, last = _engine.ams_kernel(
        gen, params.n, params.k, level0, threshold, cap, mode, trace, record_levels
    )
    if status == _engine.STATUS_CAP_EXCEEDED:
        raise IterationCapExceeded(
            f"no termination within {cap} iterations (last level {last!r})"
        )
    if status == _engine.STATUS_NONMONOTONE:
        raise IterationCapExceeded(
            f"level sequence stopped increasing at {last!r} after "
            f"{iterations} iterations"
        )
    levels = None
    if record_levels:
        zs = trace[: iterations + 1]
        if mode == _engine.MODE_USPACE:
            zs = np.array([dist.inverse_cdf(v) for v in zs])
        levels = tuple(float(v) for v in zs)
    return AmsResult.from_termination(iterations, count, params, levels)


def run_ams_reference(
    params: AmsParams,
    dist: DistributionModel,
    record_levels: bool = False,
    uniform_source: Optional[Callable[[int], np.ndarray]] = None,
) -> AmsResult:
    """Literal sorted-ensemble transcription of the splitting algorithm.

    Kept as an oracle for the compiled path: identical uniform consumption
    (n at initialization, k per iteration), identical results.  The
    ``uniform_source`` hook lets tests replay fixed draw sequences.
    """
    if params.x >= params.a:
        return AmsResult.from_termination(0, params.n, params,
                                          levels=() if record_levels else None)
    take = uniform_source or (lambda size: params.seed.uniforms(size))
    cap = params.iteration_cap
    ensemble = ReplicaEnsemble(_reference_draws(dist, params.x, take(params.n)))
    levels: list[float] = []
    iterations = 0
    prev = -math.inf
    while True:
        z = ensemble.kth_smallest(params.k)
        if not z > prev:
            raise IterationCapExceeded(
                f"level sequence stopped increasing at {z!r} after "
                f"{iterations} iterations"
            )
        prev = z
        levels.append(z)
        if z >= params.a:
            break
        iterations += 1
        if iterations > cap:
            raise IterationCapExceeded(
                f"no termination within {cap} iterations (last level {z!r})"
            )
        ensemble.replace_k_smallest(_reference_draws(dist, z, take(params.k)))
    count = ensemble.count_at_or_above(params.a)
    return AmsResult.from_termination(
        iterations, count, params, tuple(levels) if record_levels else None
    )


# ---------------------------------------------------------------------------
# Batch execution


@dataclass
class BatchResult:
    """Vectorized outcome of M independent runs (stream_index = run_index).

    ``status`` is 0 for a completed run, 1 for an iteration-cap failure,
    2 for a non-monotone level sequence; failed runs carry NaN estimates
    and are listed in ``failures`` as (run_index, reason).
    """

    p_hat: np.ndarray
    iterations: np.ndarray
    corrector: np.ndarray
    status: np.ndarray
    failures: list

    @property
    def ok(self) -> np.ndarray:
        return self.status == _engine.STATUS_OK

    def successful(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        m = self.ok
        return self.p_hat[m], self.iterations[m], self.corrector[m]


_FAILURE_NAMES = {
    _engine.STATUS_CAP_EXCEEDED: "IterationCapExceeded",
    _engine.STATUS_NONMONOTONE: "NonMonotoneLevels",
}


def _chunk_loop(dist, n, k, a, x, master_seed, start, stop, cap) -> tuple:
    if x >= a:
        mode = level0 = threshold = None  # trivial runs never hit the kernel
    else:
        params = AmsParams(n=n, k=k, a=a, x=x, max_iterations=cap,
                           seed=RngStream(master_seed, start))
        mode, level0, threshold = _engine_coordinates(params, dist)
    m = stop - start
    p_hat = np.empty(m)
    iters = np.zeros(m, dtype=np.int64)
    corr = np.empty(m)
    stat = np.zeros(m, dtype=np.uint8)
    trace = np.empty(0)
    base = 1.0 - k / n
    for i in range(m):
        if x >= a:
            p_hat[i], corr[i] = 1.0, 1.0
            continue
        gen = RngStream(master_seed, start + i).generator
        status, iterations, count, _ = _engine.ams_kernel(
            gen, n, k, level0, threshold, cap, mode, trace, False
        )
        stat[i] = status
        iters[i] = iterations
        if status == _engine.STATUS_OK:
            corr[i] = count / n
            p_hat[i] = corr[i] * base ** iterations
        else:
            corr[i] = np.nan
            p_hat[i] = np.nan
    return start, p_hat, iters, corr, stat


def _run_chunk(args) -> tuple:
    (recipe, n, k, a, x, master_seed, start, stop, cap) = args
    dist = make_distribution(recipe[0], tuple(recipe[1]))
    return _chunk_loop(dist, n, k, a, x, master_seed, start, stop, cap)


def run_ams_batch(
    dist: DistributionModel,
    n: int,
    k: int,
    a: float,
    x: float = 0.0,
    num_runs: int = 1,
    master_seed: int = 0,
    workers: int = 1,
    max_iterations: Optional[int] = None,
) -> BatchResult:
    """Run ``num_runs`` independent realizations, run m on stream index m.

    The result is a pure function of the configuration and master seed,
    independent of ``workers`` (runs are chunked by index and reassembled
    in index order).  Multi-process execution requires a built-in
    distribution (the model is rebuilt from its recipe in each worker).
    """
    if num_runs < 1:
        raise InvalidParams(f"num_runs must be >= 1, got {num_runs}")
    # validate configuration once up front
    AmsParams(n=n, k=k, a=a, x=x, max_iterations=max_iterations,
              seed=RngStream(master_seed, 0))
    workers = max(1, int(workers))
    if dist.recipe is None and workers > 1:
        raise InvalidParams(
            "parallel batches need a built-in distribution (picklable recipe); "
            f"{dist.label} has none"
        )
    cap = max_iterations if max_iterations is not None else _default_cap(n, k, a, x)

    chunk = max(256, -(-num_runs // (workers * 8)))
    bounds = [(s, min(s + chunk, num_runs)) for s in range(0, num_runs, chunk)]

    p_hat = np.empty(num_runs)
    iters = np.zeros(num_runs, dtype=np.int64)
    corr = np.empty(num_runs)
    stat = np.zeros(num_runs, dtype=np.uint8)

    def collect(res):
        start, ph, it, co, st = res
        stop = start + ph.size
        p_hat[start:stop] = ph
        iters[start:stop] = it
        corr[start:stop] = co
        stat[start:stop] = st

    if workers == 1 or len(bounds) == 1:
        for s, e in bounds:
            collect(_chunk_loop(dist, n, k, a, x, master_seed, s, e, cap))
    else:
        _engine.warm_up()  # compile before forking
        jobs = [(dist.recipe, n, k, a, x, master_seed, s, e, cap)
                for s, e in bounds]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_run_chunk, jobs):
                collect(res)

    failures = [
        (int(i), _FAILURE_NAMES.get(int(stat[i]), f"status={stat[i]}"))
        for i in np.nonzero(stat != _engine.STATUS_OK)[0]
    ]
    return BatchResult(p_hat=p_hat, iterations=iters, corrector=corr,
                       status=stat, failures=failures)
