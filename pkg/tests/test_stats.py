"""Normal CDF/quantile, KS distance, Q-Q data, characteristic functions."""

import math

import mpmath
import numpy as np
import pytest

from amsplit import (
    DomainError,
    NormalizedSample,
    confidence_interval,
    empirical_char_function,
    ks_statistic,
    make_experiment_report,
    normal_cdf,
    normal_quantile,
    qq_data,
)

mpmath.mp.dps = 40


def phi_series(z: float) -> float:
    """Independent oracle: Phi via the error-function series at 40 digits."""
    return float((1 + mpmath.erf(mpmath.mpf(z) / mpmath.sqrt(2))) / 2)


def quantile_bisection(q: float) -> float:
    """Independent oracle: invert the series CDF by bisection."""
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if phi_series(mid) < q:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


def make_sample(values) -> NormalizedSample:
    return NormalizedSample(values=np.asarray(values, float), n=100, k=1,
                            a=6.0, p=math.exp(-6))


# ---------------------------------------------------------------------------
# normal_cdf / normal_quantile


def test_normal_cdf_center_and_symmetry():
    assert normal_cdf(0.0) == 0.5
    for z in (0.5, 1.0, 2.0, 3.0):
        assert normal_cdf(z) + normal_cdf(-z) == pytest.approx(1.0, abs=1e-15)


def test_normal_cdf_against_series():
    for z in np.linspace(-8.0, 8.0, 81):
        assert normal_cdf(z) == pytest.approx(phi_series(z), abs=1e-12)


def test_normal_cdf_at_975_quantile():
    assert normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)


def test_normal_quantile_basics():
    assert normal_quantile(0.5) == 0.0
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
    assert normal_quantile(0.975) == pytest.approx(quantile_bisection(0.975), abs=1e-10)


def test_normal_quantile_roundtrip():
    for q in (0.01, 0.25, 0.975, 0.999):
        assert normal_cdf(normal_quantile(q)) == pytest.approx(q, abs=1e-10)
    for q in np.linspace(1e-6, 1 - 1e-6, 101):
        assert normal_cdf(normal_quantile(q)) == pytest.approx(q, abs=1e-10)
        assert normal_quantile(normal_cdf(normal_quantile(q))) == pytest.approx(
            normal_quantile(q), abs=1e-8
        )


def test_normal_quantile_tails():
    for q in (1e-12, 1e-9, 1 - 1e-9):
        assert normal_quantile(q) == pytest.approx(quantile_bisection(q), abs=1e-7)
        assert normal_cdf(normal_quantile(q)) == pytest.approx(q, rel=1e-6)


def test_normal_quantile_domain():
    for q in (0.0, 1.0, -0.3, 2.0):
        with pytest.raises(DomainError):
            normal_quantile(q)


# ---------------------------------------------------------------------------
# KS statistic


def test_ks_statistic_normal_sample():
    gen = np.random.Generator(np.random.Philox(key=314159))
    sample = make_sample(gen.standard_normal(10**4))
    assert ks_statistic(sample) <= 1.95 / math.sqrt(10**4)


def test_ks_statistic_constant_sample():
    assert ks_statistic(make_sample(np.full(100, 0.3))) >= 0.5


def test_ks_statistic_shifted_sample():
    gen = np.random.Generator(np.random.Philox(key=2718))
    sample = make_sample(gen.standard_normal(10**4) + 0.5)
    assert ks_statistic(sample) >= 0.15


def test_ks_statistic_needs_ten_points():
    with pytest.raises(DomainError):
        ks_statistic(make_sample(np.arange(5.0)))


def test_ks_statistic_permutation_invariant():
    gen = np.random.Generator(np.random.Philox(key=99))
    values = gen.standard_normal(500)
    d1 = ks_statistic(make_sample(values))
    d2 = ks_statistic(make_sample(values[::-1].copy()))
    assert d1 == d2


# ---------------------------------------------------------------------------
# Q-Q data


def test_qq_data_near_diagonal_for_normal():
    gen = np.random.Generator(np.random.Philox(key=7))
    sample = make_sample(gen.standard_normal(10**5))
    pairs = qq_data(sample, 100)
    assert np.max(np.abs(pairs[:, 0] - pairs[:, 1])) <= 0.1


def test_qq_data_single_point_is_median():
    values = np.array([3.0, 1.0, 2.0, 5.0, 4.0])
    pairs = qq_data(make_sample(values), 1)
    assert pairs.shape == (1, 2)
    assert pairs[0, 0] == 0.0
    assert pairs[0, 1] == np.median(values)


def test_qq_data_shift_equivariance():
    gen = np.random.Generator(np.random.Philox(key=12))
    values = gen.standard_normal(400)
    base = qq_data(make_sample(values), 20)
    shifted = qq_data(make_sample(values + 2.5), 20)
    assert np.array_equal(base[:, 0], shifted[:, 0])
    assert np.allclose(shifted[:, 1] - base[:, 1], 2.5, rtol=0, atol=1e-12)


def test_qq_data_sorted_and_validated():
    gen = np.random.Generator(np.random.Philox(key=13))
    sample = make_sample(gen.standard_normal(100))
    pairs = qq_data(sample, 17)
    assert np.all(np.diff(pairs[:, 1]) >= 0)
    assert np.all(np.isfinite(pairs))
    with pytest.raises(DomainError):
        qq_data(sample, 101)


# ---------------------------------------------------------------------------
# empirical characteristic function


def test_ecf_at_zero_and_modulus():
    gen = np.random.Generator(np.random.Philox(key=5))
    values = gen.standard_normal(1000)
    assert empirical_char_function(values, 0.0) == 1.0 + 0.0j
    for t in (0.3, 1.0, 4.0):
        assert abs(empirical_char_function(values, t)) <= 1.0 + 1e-15


def test_ecf_conjugate_symmetry():
    gen = np.random.Generator(np.random.Philox(key=6))
    values = gen.standard_normal(1000)
    for t in (0.5, 1.7):
        assert empirical_char_function(values, -t) == np.conj(
            empirical_char_function(values, t)
        )


def test_ecf_gaussian_limit_shape():
    # for an exact normal sample the ecf approaches exp(-t^2/2)
    gen = np.random.Generator(np.random.Philox(key=8))
    values = gen.standard_normal(10**5)
    val = empirical_char_function(values, 1.0)
    assert abs(val - math.exp(-0.5)) < 0.02


# ---------------------------------------------------------------------------
# NormalizedSample and reports


def test_normalized_sample_construction():
    p = math.exp(-2)
    sample = NormalizedSample.from_estimates([p, p], n=50, k=5, a=2.0, p=p)
    assert np.array_equal(sample.values, [0.0, 0.0])
    with pytest.raises(DomainError):
        NormalizedSample(values=np.array([1.0]), n=10, k=1, a=1.0, p=0.5)
    with pytest.raises(DomainError):
        NormalizedSample(values=np.array([1.0, np.nan]), n=10, k=1, a=1.0, p=0.5)


def test_report_fields_and_invariants():
    gen = np.random.Generator(np.random.Philox(key=21))
    p = math.exp(-2)
    p_hats = p * np.exp(0.05 * gen.standard_normal(500))
    iters = gen.integers(90, 110, size=500)
    rep = make_experiment_report(p_hats, iters, n=100, k=10, a=2.0, p_true=p)
    assert rep.m_runs == 500
    assert sum(rep.hist_counts) == 500
    qq_second = [pair[1] for pair in rep.qq_pairs]
    assert qq_second == sorted(qq_second)
    assert rep.mean_p_hat == pytest.approx(p_hats.mean())
    assert rep.var_p_hat == pytest.approx(p_hats.var(ddof=1))
    assert rep.mean_iterations == pytest.approx(iters.mean())
    assert 0.0 <= rep.ci_coverage <= 1.0
    # coverage agrees with counting via the analysis-module interval
    inside = sum(
        lo <= p <= hi
        for lo, hi in (confidence_interval(ph, 100, 0.05) for ph in p_hats)
    )
    assert rep.ci_coverage == pytest.approx(inside / 500)


def test_report_single_run():
    rep = make_experiment_report([0.01], [42], n=100, k=2, a=5.0)
    assert rep.mean_p_hat == 0.01
    assert rep.var_p_hat is None
    assert rep.ks_normalized is None
    assert rep.hist_counts == []
    assert rep.mean_iterations == 42.0


def test_report_without_true_p_uses_plugin_mean():
    gen = np.random.Generator(np.random.Philox(key=22))
    p_hats = 0.05 + 0.001 * gen.standard_normal(200)
    rep = make_experiment_report(p_hats, np.ones(200), n=100, k=1, a=3.0)
    assert rep.p_reference == pytest.approx(p_hats.mean())
    assert rep.ci_coverage is None
