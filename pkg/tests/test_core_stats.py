import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from derstats import core_stats as cs
from derstats.errors import (
    DegenerateMeans,
    MissingGroup,
    NonpositiveControlMean,
    TooFewGroups,
    UndefinedVariance,
    ValidationError,
    ZeroVariance,
)


def fd_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (f(up) - f(dn)) / (2 * h)
    return out


@pytest.mark.parametrize(
    "means, expected",
    [
        ((1.0, 1.0), 0.0),
        ((1.0, 0.0), 1.0),
        ((4.0, 6.0), 0.04),
        ((1.0, 0.0, 0.0), 1.0),
    ],
)
def test_der_statistic_examples(means, expected):
    assert cs.der_statistic(means) == pytest.approx(expected, abs=1e-12)


def test_der_statistic_errors():
    with pytest.raises(TooFewGroups):
        cs.der_statistic([1.0])
    with pytest.raises(DegenerateMeans):
        cs.der_statistic([0.0, 0.0])
    with pytest.raises(DegenerateMeans):
        cs.der_statistic([1.0, -0.5])


def test_der_gradient_examples():
    np.testing.assert_allclose(cs.der_gradient([1.0, 1.0]), [0.0, 0.0], atol=1e-15)
    # frozen from the finite-difference oracle
    np.testing.assert_allclose(cs.der_gradient([2.0, 1.0]), [4 / 27, -8 / 27], rtol=1e-12)
    np.testing.assert_allclose(fd_gradient(cs.der_statistic, [2.0, 1.0]), [4 / 27, -8 / 27], rtol=1e-8)
    fd = fd_gradient(cs.der_statistic, [0.4, 0.6], h=1e-7)
    np.testing.assert_allclose(cs.der_gradient([0.4, 0.6]), fd, rtol=1e-8)


def test_der_gradient_k2_closed_form():
    mu = np.array([3.0, 1.5])
    u, v = mu.sum(), (mu**2).sum()
    np.testing.assert_allclose(cs.der_gradient(mu), 4 * (mu - v / u) / u**2, rtol=1e-14)


means_vectors = st.integers(2, 8).flatmap(
    lambda k: st.lists(st.floats(0.0, 1e3, allow_nan=False), min_size=k, max_size=k)
).filter(lambda m: sum(m) > 1e-6)


@given(means_vectors)
def test_der_range(means):
    assert 0.0 <= cs.der_statistic(means) <= 1.0


@given(means_vectors, st.floats(1e-3, 1e3))
def test_der_scale_invariance(means, c):
    assert cs.der_statistic(np.asarray(means) * c) == pytest.approx(cs.der_statistic(means), abs=1e-12)


@given(means_vectors, st.randoms(use_true_random=False))
def test_der_permutation_invariance(means, rnd):
    shuffled = list(means)
    rnd.shuffle(shuffled)
    assert cs.der_statistic(shuffled) == pytest.approx(cs.der_statistic(means), abs=1e-14)


@given(st.integers(2, 8).flatmap(lambda k: st.lists(st.floats(0.5, 10.0), min_size=k, max_size=k)))
def test_der_gradient_matches_finite_differences(means):
    fd = fd_gradient(cs.der_statistic, means)
    an = cs.der_gradient(means)
    scale = max(np.max(np.abs(an)), 1e-3)
    assert np.max(np.abs(fd - an)) / scale < 1e-6


def test_group_summaries_hand_arithmetic():
    out = cs.group_summaries(["A", "A", "B"], [1.0, 3.0, 2.0], ["A", "B"])
    a, b = out
    assert (a.group_label, a.n, a.mean, a.variance) == ("A", 2, 2.0, 2.0)
    assert a.fraction == pytest.approx(2 / 3)
    assert (b.n, b.mean) == (1, 2.0)
    assert math.isnan(b.variance) and not b.variance_defined
    assert b.fraction == pytest.approx(1 / 3)


def test_group_summaries_missing_and_unknown():
    with pytest.raises(MissingGroup):
        cs.group_summaries(["A", "A"], [1.0, 2.0], ["A", "B"])
    with pytest.raises(ValidationError):
        cs.group_summaries(["A", "C"], [1.0, 2.0], ["A", "B"])


def test_group_summaries_equal_means():
    a, b = cs.group_summaries(["A", "B"], [5.0, 5.0], ["A", "B"])
    assert a.mean == b.mean == 5.0
    assert a.fraction == b.fraction == 0.5


@given(st.lists(st.tuples(st.sampled_from("xyz"), st.floats(0, 100)), min_size=1, max_size=60))
def test_fractions_sum_to_one(rows):
    labels = sorted({g for g, _ in rows})
    groups, values = zip(*rows)
    out = cs.group_summaries(groups, values, labels)
    assert abs(sum(g.fraction for g in out) - 1.0) < 1e-12


def _summary(label, n, mean, var, frac):
    return cs.GroupSummary(label, n, mean, var, frac)


def test_der_variance_k2_examples():
    # equal means -> zero, whatever the variances
    assert cs.der_variance_k2([_summary(1, 50, 1.0, 3.0, 0.5), _summary(2, 50, 1.0, 7.0, 0.5)]) == 0.0
    # mu=(2, 1), sigma^2 = 1, p = 0.5; the n = 1 per-unit value is 160/729
    v = cs.der_variance_k2([_summary(1, 500, 2.0, 1.0, 0.5), _summary(2, 500, 1.0, 1.0, 0.5)])
    assert v * 1000 == pytest.approx(160 / 729, rel=1e-12)
    assert cs.der_variance_k2([_summary(1, 5, 2.0, 0.0, 0.5), _summary(2, 5, 1.0, 0.0, 0.5)]) == 0.0


def test_der_variance_cross_pairing():
    # group 1's mean multiplies group 2's variance
    base = [_summary(1, 500, 2.0, 1.0, 0.5), _summary(2, 500, 1.0, 0.0, 0.5)]
    scale = 16 * 1.0 / (1000 * 3.0**6)
    assert cs.der_variance_k2(base) == pytest.approx(scale * (1.0**2 * 1.0 / 0.5))


def test_der_variance_errors():
    with pytest.raises(UndefinedVariance):
        cs.der_variance_k2([_summary(1, 1, 2.0, math.nan, 0.5), _summary(2, 5, 1.0, 1.0, 0.5)])
    with pytest.raises(DegenerateMeans):
        cs.der_variance_k2([_summary(1, 5, 0.0, 0.0, 0.5), _summary(2, 5, 0.0, 0.0, 0.5)])


def _toy_arm(mean1, mean2, n=400):
    # two equally sized groups with a small spread around the stated means
    offsets = np.tile([-0.5, 0.5], n // 2)
    groups = np.repeat([1, 2], n)
    values = np.concatenate([mean1 + offsets, mean2 + offsets])
    return groups, values


def test_der_delta_toy():
    control = _toy_arm(6.0, 4.0)
    treatment = _toy_arm(5.5, 4.5)
    res = cs.der_delta(control, treatment, [1, 2])
    assert res.control.value == pytest.approx(0.04, abs=1e-12)
    assert res.treatment.value == pytest.approx(0.01, abs=1e-12)
    assert res.delta == pytest.approx(-0.03, abs=1e-12)
    assert res.delta == res.treatment.value - res.control.value
    assert res.variance == res.control.variance + res.treatment.variance


def test_der_delta_identical_samples():
    arm = _toy_arm(6.0, 4.0)
    res = cs.der_delta(arm, arm, [1, 2])
    assert res.delta == 0.0
    assert res.z_score == 0.0
    assert res.p_value == 1.0


def test_der_delta_no_test_when_variance_zero():
    arm = (np.array([1, 1, 2, 2]), np.array([3.0, 3.0, 3.0, 3.0]))
    res = cs.der_delta(arm, arm, [1, 2])
    assert res.variance == 0.0
    assert math.isnan(res.p_value)
    with pytest.raises(ZeroVariance):
        cs.require_test(res)


def test_der_delta_k3_needs_plan():
    arm = (np.repeat([1, 2, 3], 10), np.arange(30, dtype=float))
    with pytest.raises(UndefinedVariance):
        cs.der_delta(arm, arm, [1, 2, 3])


def test_relative_lift_examples():
    res = cs.relative_lift((100, 1.0, 1.0), (100, 1.1, 1.0))
    assert res.lift == pytest.approx(0.1)
    assert res.variance == pytest.approx(0.0221, rel=1e-12)
    half = 1.959963984540054 * math.sqrt(0.0221)
    assert res.ci_low == pytest.approx(0.1 - half)
    assert res.ci_high == pytest.approx(0.1 + half)
    zero = cs.relative_lift((10, 2.0, 1.0), (10, 2.0, 1.0))
    assert zero.lift == 0.0


def test_relative_lift_errors():
    with pytest.raises(NonpositiveControlMean):
        cs.relative_lift((10, 0.0, 1.0), (10, 1.0, 1.0))
    with pytest.raises(UndefinedVariance):
        cs.relative_lift((1, 1.0, math.nan), (10, 1.0, 1.0))


def test_representation_report_identical_variants():
    arm = _toy_arm(6.0, 4.0)
    rep = cs.representation_report(arm, arm, [1, 2], "job_views")
    assert rep.overall_lift.lift == 0.0
    assert rep.der_delta.delta == 0.0
    assert rep.lift_gap.estimate == 0.0
    assert set(rep.per_group_lifts) == {1, 2}


def test_representation_report_toy():
    # control shares 60/40, treatment shares 55/45 at twice the volume
    control = _toy_arm(6.0, 4.0)
    treatment = _toy_arm(11.0, 9.0)
    rep = cs.representation_report(control, treatment, [1, 2], "job_views")
    assert rep.overall_lift.lift == pytest.approx(1.0)
    assert rep.der_delta.delta == pytest.approx(-0.03, abs=1e-12)
    assert rep.unsquared_der_delta == pytest.approx(0.1 - 0.2)
    # the under-represented group 2 gains more in relative terms
    assert rep.per_group_lifts[1].lift == pytest.approx(5 / 6)
    assert rep.per_group_lifts[2].lift == pytest.approx(1.25)
    assert rep.lift_gap.estimate == pytest.approx(5 / 6 - 1.25)
    assert rep.lift_gap.variance == pytest.approx(
        rep.per_group_lifts[1].variance + rep.per_group_lifts[2].variance
    )


@settings(deadline=None, max_examples=30)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.01, 5), st.floats(0.01, 5), st.integers(10, 10**6))
def test_unsquared_delta_sign_matches_delta(a, b, va, vb, n):
    c = cs.DerEstimate(2, (a, b), cs.der_statistic([a, b]), va / n)
    t = cs.DerEstimate(2, (b, a * 1.3), cs.der_statistic([b, a * 1.3]), vb / n)
    d = cs.combine(c, t)
    if d.delta != 0:
        assert math.copysign(1, d.unsquared_delta) == math.copysign(1, d.delta)
