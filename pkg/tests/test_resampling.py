import numpy as np
import pytest

from derstats import core_stats as cs
from derstats import resampling as rs
from derstats.errors import ResampleDegenerate, UndefinedVariance


def summaries(mu1, mu2, v1, v2, p1, n):
    n1 = round(p1 * n)
    return [
        cs.GroupSummary(1, n1, mu1, v1, n1 / n),
        cs.GroupSummary(2, n - n1, mu2, v2, (n - n1) / n),
    ]


def two_group_arm(rng, n, mu=(3.0, 2.0), sd=1.0):
    g = rng.integers(0, 2, n)
    y = np.where(g == 0, mu[0], mu[1]) + sd * rng.standard_normal(n)
    return g, np.abs(y)


def test_plan_validation():
    with pytest.raises(ValueError):
        rs.ResamplingPlan("jackknife")
    with pytest.raises(ValueError):
        rs.ResamplingPlan("bootstrap", replicates=99)


def test_moment_covariance_example():
    s = summaries(0.0, 0.0, 1.0, 1.0, 0.5, 1000)
    cov = rs.moment_covariance_from_summaries(s)
    expected = np.array([
        [0.25, -0.25, 0.0, 0.0],
        [-0.25, 0.25, 0.0, 0.0],
        [0.0, 0.0, 0.5, 0.0],
        [0.0, 0.0, 0.0, 0.5],
    ])
    np.testing.assert_allclose(cov.sigma2, expected, atol=1e-15)
    np.testing.assert_allclose(cov.lambda2, np.diag([2.0, 2.0]) / 1000, atol=1e-15)


def test_moment_covariance_singular_when_constant():
    cov = rs.moment_covariance_from_summaries(summaries(2.0, 1.0, 0.0, 0.0, 0.4, 1000))
    np.testing.assert_allclose(cov.lambda2, np.zeros((2, 2)), atol=1e-15)


def test_moment_covariance_from_rows():
    rng = np.random.default_rng(0)
    g, y = two_group_arm(rng, 500)
    cov = rs.moment_covariance(g, y, [0, 1])
    s = cs.group_summaries(g, y, [0, 1])
    n = 500
    np.testing.assert_allclose(np.diag(cov.lambda2), [x.variance / x.fraction / n for x in s], rtol=1e-10)
    with pytest.raises(UndefinedVariance):
        rs.moment_covariance([0, 1, 1], [1.0, 2.0, 3.0], [0, 1])


def test_sigma2_psd_and_lambda2_diagonal_on_random_inputs():
    rng = np.random.default_rng(1)
    for _ in range(300):
        s = summaries(*rng.uniform(0, 10, 2), *rng.uniform(0, 20, 2), rng.uniform(0.05, 0.95), 10_000)
        cov = rs.moment_covariance_from_summaries(s)
        assert np.allclose(cov.sigma2, cov.sigma2.T)
        assert np.linalg.eigvalsh(cov.sigma2).min() >= -1e-10
        diag = np.diag([x.variance / x.fraction for x in s]) / 10_000
        np.testing.assert_allclose(cov.lambda2, diag, rtol=1e-9, atol=1e-12 * diag.max())


def test_oracle_matches_closed_form_examples():
    s = summaries(2.0, 1.0, 1.0, 1.0, 0.5, 1000)
    assert rs.delta_oracle_variance(s) == pytest.approx(160 / 729 / 1000, rel=1e-10)
    assert rs.delta_oracle_variance(s) == pytest.approx(cs.der_variance_k2(s), rel=1e-10)
    assert rs.delta_oracle_variance(summaries(1.5, 1.5, 1.0, 2.0, 0.3, 1000)) == pytest.approx(0.0, abs=1e-20)


def test_oracle_matches_closed_form_sweep():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        mu = rng.uniform(0.01, 50, 2)
        var = rng.uniform(0.01, 500, 2)
        s = summaries(mu[0], mu[1], var[0], var[1], rng.uniform(0.02, 0.98), int(rng.integers(100, 10**7)))
        closed = cs.der_variance_k2(s)
        worst = max(worst, abs(rs.delta_oracle_variance(s) - closed) / closed)
    assert worst < 1e-8


def test_constant_metric_resamples_to_zero():
    g = np.array([0, 1] * 50)
    y = np.full(100, 4.0)
    for scheme in rs.SCHEMES:
        plan = rs.ResamplingPlan(scheme, 200, seed=5)
        fn = rs.bootstrap_variance if scheme == "bootstrap" else rs.permutation_variance
        assert fn((g, y), (g, y), [0, 1], plan) == 0.0


def test_resampling_is_deterministic():
    rng = np.random.default_rng(4)
    c, t = two_group_arm(rng, 2000), two_group_arm(rng, 2000)
    for scheme in rs.SCHEMES:
        plan = rs.ResamplingPlan(scheme, 150, seed=9)
        a = rs.resample_der(c, t, [0, 1], plan)
        b = rs.resample_der(c, t, [0, 1], plan)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])
    plan = rs.ResamplingPlan("bootstrap", 150, seed=9)
    other = rs.ResamplingPlan("bootstrap", 150, seed=10)
    assert rs.bootstrap_variance(c, t, [0, 1], plan) != rs.bootstrap_variance(c, t, [0, 1], other)


def test_scheme_mismatch():
    rng = np.random.default_rng(4)
    c = two_group_arm(rng, 200)
    with pytest.raises(ValueError):
        rs.bootstrap_variance(c, c, [0, 1], rs.ResamplingPlan("permutation"))


def test_degenerate_resamples_raise():
    # a single unit of group 1 per arm vanishes from about a third of the bootstraps
    g = np.array([1] + [0] * 3)
    y = np.array([5.0, 1.0, 2.0, 3.0])
    with pytest.raises(ResampleDegenerate):
        rs.bootstrap_variance((g, y), (g, y), [0, 1], rs.ResamplingPlan("bootstrap", 200))


def test_bootstrap_close_to_delta_on_large_sample():
    rng = np.random.default_rng(7)
    c, t = two_group_arm(rng, 40_000), two_group_arm(rng, 40_000)
    delta = cs.der_delta(c, t, [0, 1]).variance
    boot = rs.bootstrap_variance(c, t, [0, 1], rs.ResamplingPlan("bootstrap", 400, seed=1))
    perm = rs.permutation_variance(c, t, [0, 1], rs.ResamplingPlan("permutation", 400, seed=1))
    assert 1 / 1.5 < boot / delta < 1.5
    assert 1 / 1.5 < perm / boot < 1.5


def test_resampled_der_delta_k3():
    rng = np.random.default_rng(8)
    g = rng.integers(0, 3, 3000)
    y = rng.poisson(np.array([2.0, 3.0, 4.0])[g]).astype(float)
    res = cs.der_delta((g, y), (g, y[::-1]), [0, 1, 2], plan=rs.ResamplingPlan("bootstrap", 200, seed=3))
    assert res.variance_method == "bootstrap"
    assert res.variance == res.control.variance + res.treatment.variance
    assert res.variance > 0
    assert 0.0 <= res.p_value <= 1.0
