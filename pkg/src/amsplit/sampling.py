"""Distribution models, seeded random streams, and order-statistic laws.

Everything downstream (the splitting algorithm, the verification engine) is
built on three primitives defined here:

* :class:`DistributionModel` -- a continuous law described by its CDF and
  inverse CDF, supporting exact conditional sampling above a level.
* :class:`RngStream` -- a counter-based (Philox) random stream identified by
  ``(master_seed, stream_index)``, so that parallel batches are reproducible
  run by run.
* the exponential reduction ``lambda_transform`` and the order-statistic
  CDF/PDF of conditional exponential samples, used by the analytic checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "DomainError",
    "DistributionModel",
    "RngStream",
    "exponential",
    "uniform",
    "normal",
    "make_distribution",
    "lambda_transform",
    "sample_conditional",
    "order_statistic_cdf",
    "order_statistic_pdf",
]

# Smallest uniform admitted by conditional draws; gen.random() can return
# exactly 0.0, which must be excluded from the open interval (0, 1).
_MIN_UNIFORM = 2.0 ** -53

_U64_MAX = 2 ** 64 - 1


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


@dataclass(frozen=True)
class DistributionModel:
    """A continuous real law given by its CDF and inverse CDF.

    ``cdf`` must be nondecreasing and continuous; ``inverse_cdf`` maps
    (0, 1) to the support and inverts ``cdf`` to high accuracy.  ``recipe``
    records how a built-in model was constructed (name, parameters) so that
    worker processes can rebuild it; hand-made models may leave it None.
    """

    cdf: Callable[[float], float]
    inverse_cdf: Callable[[float], float]
    label: str
    recipe: Optional[tuple] = None

    def __repr__(self) -> str:  # lambdas make the default repr useless
        return f"DistributionModel({self.label!r})"


def exponential() -> DistributionModel:
    """Unit-rate exponential law: cdf(z) = 1 - exp(-z) for z > 0."""
    return DistributionModel(
        cdf=lambda z: -math.expm1(-z) if z > 0.0 else 0.0,
        inverse_cdf=lambda q: -math.log1p(-q),
        label="Exponential(1)",
        recipe=("exponential", ()),
    )


def uniform(lo: float = 0.0, hi: float = 1.0) -> DistributionModel:
    """Uniform law on (lo, hi)."""
    if not hi > lo:
        raise DomainError(f"uniform requires hi > lo, got ({lo}, {hi})")
    width = hi - lo
    return DistributionModel(
        cdf=lambda z: min(max((z - lo) / width, 0.0), 1.0),
        inverse_cdf=lambda q: lo + q * width,
        label=f"Uniform({lo:g},{hi:g})",
        recipe=("uniform", (lo, hi)),
    )


def normal(mu: float = 0.0, sigma: float = 1.0) -> DistributionModel:
    """Gaussian law; quantiles come from the stats module."""
    from . import stats  # local import keeps module load order flexible

    if not sigma > 0.0:
        raise DomainError(f"normal requires sigma > 0, got {sigma}")
    return DistributionModel(
        cdf=lambda z: stats.normal_cdf((z - mu) / sigma),
        inverse_cdf=lambda q: mu + sigma * stats.normal_quantile(q),
        label=f"Normal({mu:g},{sigma:g})",
        recipe=("normal", (mu, sigma)),
    )


_BUILTINS: dict[str, Callable[..., DistributionModel]] = {
    "exponential": exponential,
    "uniform": uniform,
    "normal": normal,
}


def make_distribution(name: str, params: tuple = ()) -> DistributionModel:
    """Build a built-in model from its registry name and parameters."""
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise DomainError(
            f"unknown distribution {name!r}; built-ins: {sorted(_BUILTINS)}"
        ) from None
    return factory(*params)


@dataclass
class RngStream:
    """Deterministic random stream keyed by (master_seed, stream_index).

    Streams are backed by the counter-based Philox generator with the
    128-bit key ``master_seed * 2**64 + stream_index``: identical pairs
    replay the exact same sequence, distinct stream indices give
    statistically independent streams.  A stream is single-owner state;
    parallel code uses one stream per run index and never shares one.
    """

    master_seed: int
    stream_index: int = 0
    _gen: Optional[np.random.Generator] = field(
        default=None, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        for name in ("master_seed", "stream_index"):
            v = getattr(self, name)
            if not (0 <= int(v) <= _U64_MAX):
                raise DomainError(f"{name} must be an unsigned 64-bit integer, got {v}")

    @property
    def generator(self) -> np.random.Generator:
        """The underlying numpy Generator (created on first use)."""
        if self._gen is None:
            key = (int(self.master_seed) << 64) | int(self.stream_index)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def uniforms(self, size: int) -> np.ndarray:
        """Next ``size`` uniform draws on [0, 1), advancing the stream."""
        return self.generator.random(size)

    def reset(self) -> None:
        """Rewind the stream to its initial state."""
        self._gen = None


def _checked_cdf_at(dist: DistributionModel, x: float) -> float:
    """cdf(x), raising DomainError when the upper tail is not samplable."""
    f = dist.cdf(x)
    if not 0.0 <= f < 1.0:
        # f >= 1 - 1e-300 collapses to f == 1.0 in binary64; past this point
        # the conditional law L(X | X > x) has no representable tail.
        raise DomainError(
            f"cdf({x}) = {f} for {dist.label}: conditional tail is empty "
            "or cdf is invalid"
        )
    return f


def lambda_transform(dist: DistributionModel, x: float) -> float:
    """Exponential reduction ``-log(1 - F(x))`` of a continuous law.

    Maps any continuous-CDF random variable to a unit-rate exponential one;
    strictly increasing wherever F is.  Raises :class:`DomainError` when
    F(x) is within 1e-300 of 1 (no representable tail).
    """
    f = _checked_cdf_at(dist, x)
    return -math.log1p(-f)


def _conditional_from_uniforms(
    dist: DistributionModel, level: float, u: np.ndarray
) -> np.ndarray:
    """Map uniforms on [0,1) to draws from L(X | X > level).

    Exponential(1) takes the memoryless shortcut ``level + E(1)``; any
    other model goes through the generic inverse-CDF composition
    ``inverse_cdf(F(level) + U (1 - F(level)))``.  Both consume exactly one
    uniform per draw, so runs on different models with matched streams map
    onto each other through the exponential reduction.
    """
    u = np.maximum(u, _MIN_UNIFORM)
    if dist.recipe is not None and dist.recipe[0] == "exponential":
        if not np.isfinite(level):
            raise DomainError(f"conditional level must be finite, got {level}")
        return level - np.log1p(-u)
    f = _checked_cdf_at(dist, level)
    q = f + u * (1.0 - f)
    icdf = np.frompyfunc(dist.inverse_cdf, 1, 1)
    return icdf(q).astype(float)


def sample_conditional(
    dist: DistributionModel,
    level: float,
    rng: RngStream | np.random.Generator,
    size: Optional[int] = None,
):
    """Draw from the conditional law L(X | X > level).

    Parameters
    ----------
    dist : DistributionModel
    level : float
        Conditioning level; requires F(level) < 1.
    rng : RngStream or numpy Generator
        Stream to consume uniforms from (one per draw).
    size : int, optional
        When given, return an ndarray of that many iid draws; otherwise a
        single float.
    """
    gen = rng.generator if isinstance(rng, RngStream) else rng
    u = gen.random(1 if size is None else size)
    out = _conditional_from_uniforms(dist, level, u)
    return float(out[0]) if size is None else out


def _exp_cdf_shifted(y: float, x: float) -> float:
    """F(y - x) for the unit exponential, 0 below the shift."""
    return -math.expm1(-(y - x)) if y > x else 0.0


def order_statistic_cdf(n: int, l: int, y: float, x: float = 0.0) -> float:
    """CDF at ``y`` of the l-th order statistic of n conditional exponentials.

    The sample is n iid draws from L(X | X > x) with X ~ Exponential(1),
    i.e. shifted unit exponentials.  Computed as the binomial upper-tail sum

        F_{n,l}(y; x) = sum_{j=l}^{n} C(n,j) q^j (1-q)^{n-j},  q = F(y-x),

    with binomial coefficients in log space so the sum stays finite up to
    n ~ 1e4.  By convention l = 0 refers to the conditioning level itself:
    F_{n,0}(y; x) = 1 for x <= y and 0 otherwise.
    """
    if l < 0 or l > n:
        raise DomainError(f"order statistic index l={l} outside 0..{n}")
    if n < 1:
        raise DomainError(f"sample size n={n} must be >= 1")
    if l == 0:
        return 1.0 if x <= y else 0.0
    q = _exp_cdf_shifted(y, x)
    if q <= 0.0:
        return 0.0
    if q >= 1.0:
        return 1.0
    j = np.arange(l, n + 1, dtype=float)
    log_comb = (
        math.lgamma(n + 1)
        - np.array([math.lgamma(v + 1) for v in j])
        - np.array([math.lgamma(n - v + 1) for v in j])
    )
    terms = np.exp(log_comb + j * math.log(q) + (n - j) * math.log1p(-q))
    return float(min(terms.sum(), 1.0))


def order_statistic_pdf(n: int, k: int, y: float, x: float = 0.0) -> float:
    """Density at ``y`` of the k-th order statistic of n conditional exponentials.

    f_{n,k}(y; x) = k C(n,k) F(y-x)^{k-1} f(y-x) (1 - F(y-x))^{n-k}, zero
    for y <= x.  Log-space evaluation, same stability regime as the CDF.
    """
    if k < 1 or k > n:
        raise DomainError(f"order statistic index k={k} outside 1..{n}")
    if y <= x:
        return 0.0
    z = y - x
    q = -math.expm1(-z)
    log_comb = math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)
    log_term = math.log(k) + log_comb - z + (n - k) * (-z)
    if k > 1:
        log_term += (k - 1) * math.log(q)
    return math.exp(log_term)
