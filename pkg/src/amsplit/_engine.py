"""Compiled core of the splitting iteration.

One numba kernel runs a whole splitting trajectory: it keeps the replica
values in a binary min-heap, reads the k-th order statistic by popping k
values, and resamples by pushing k conditional draws.  The heap produces
exactly the same level sequence, iteration count and final corrector as the
sorted-ensemble reference in :mod:`amsplit.ams` (the estimator depends only
on the multiset of values), at O(k log n) per iteration instead of O(n).

Uniform draws are consumed in a fixed order -- n at initialization, then k
per iteration -- directly from a numpy Generator, so a pure-Python run on
the same stream reproduces the kernel bit for bit.

Coordinate modes:

* ``MODE_SHIFT`` -- values live in the law's own space and conditional
  draws use the exponential memoryless shortcut ``level - log1p(-u)``.
* ``MODE_USPACE`` -- values live in probability space (v = F(x)); draws use
  ``level + u (1 - level)``, the inverse-CDF composition before applying
  the inverse CDF.  Order statistics, iteration counts and threshold
  crossings are invariant under the (monotone) inverse CDF, so results
  agree with sampling in the original space.
"""

import numpy as np
from numba import njit

MODE_SHIFT = 0
MODE_USPACE = 1

STATUS_OK = 0
STATUS_CAP_EXCEEDED = 1
STATUS_NONMONOTONE = 2

# gen.random() may return exactly 0.0; conditional draws need (0, 1).
_MIN_UNIFORM = 2.0 ** -53


@njit(cache=True)
def _sift_down(h, start, size):
    root = start
    val = h[root]
    while True:
        child = 2 * root + 1
        if child >= size:
            break
        if child + 1 < size and h[child + 1] < h[child]:
            child += 1
        if h[child] < val:
            h[root] = h[child]
            root = child
        else:
            break
    h[root] = val


@njit(cache=True)
def _sift_up(h, pos):
    val = h[pos]
    while pos > 0:
        parent = (pos - 1) >> 1
        if val < h[parent]:
            h[pos] = h[parent]
            pos = parent
        else:
            break
    h[pos] = val


@njit(cache=True)
def _draw(mode, level, u):
    if u < _MIN_UNIFORM:
        u = _MIN_UNIFORM
    if mode == MODE_SHIFT:
        return level - np.log1p(-u)
    return level + u * (1.0 - level)


@njit(cache=True)
def ams_kernel(gen, n, k, level0, threshold, cap, mode, trace, record_trace):
    """Run one splitting trajectory; returns (status, J, count, last_level).

    ``count`` is the number of replicas >= threshold at termination and is
    only meaningful for STATUS_OK.  When ``record_trace`` is set, the level
    sequence Z^1..Z^{J+1} is written into ``trace`` (length >= cap + 2).
    """
    vals = np.empty(n)
    for i in range(n):
        vals[i] = _draw(mode, level0, gen.random())
    for i in range(n // 2 - 1, -1, -1):
        _sift_down(vals, i, n)

    tmp = np.empty(k)
    iterations = 0
    prev = -np.inf
    size = n
    while True:
        # pop the k smallest; tmp[k-1] is the k-th order statistic
        for i in range(k):
            tmp[i] = vals[0]
            size -= 1
            vals[0] = vals[size]
            _sift_down(vals, 0, size)
        z = tmp[k - 1]
        if not (z > prev):
            return STATUS_NONMONOTONE, iterations, 0, z
        prev = z
        if record_trace:
            trace[iterations] = z
        if z >= threshold:
            count = 0
            for i in range(k):
                if tmp[i] >= threshold:
                    count += 1
            for i in range(size):
                if vals[i] >= threshold:
                    count += 1
            return STATUS_OK, iterations, count, z
        iterations += 1
        if iterations > cap:
            return STATUS_CAP_EXCEEDED, iterations, 0, z
        for i in range(k):
            vals[size] = _draw(mode, z, gen.random())
            size += 1
            _sift_up(vals, size - 1)


def warm_up() -> None:
    """Force kernel compilation (cached on disk after the first build)."""
    gen = np.random.Generator(np.random.Philox(key=0))
    ams_kernel(gen, 4, 1, 0.0, 0.5, 1000, MODE_SHIFT, np.empty(0), False)
