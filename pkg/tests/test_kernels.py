import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from derstats import _kernels_py, kernels

try:
    from derstats import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = [_kernels_py] + ([_compiled] if _compiled is not None else [])
needs_compiled = pytest.mark.skipif(_compiled is None, reason="compiled kernels not built")


def brute_ks(a, b):
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(1 for v in a if v <= x) / len(a)
        fb = sum(1 for v in b if v <= x) / len(b)
        best = max(best, abs(fa - fb))
    return best


def brute_split_scores(x, w, y, thresholds, min_leaf):
    """Per-threshold t^2 by direct masking (no missing values)."""
    out = []
    for t in thresholds:
        stats = []
        for side in (x <= t, x > t):
            y0, y1 = y[side & (w == 0)], y[side & (w == 1)]
            if len(y0) < max(min_leaf, 2) or len(y1) < max(min_leaf, 2) or y0.mean() <= 0:
                stats = None
                break
            m0, m1 = y0.mean(), y1.mean()
            var = m1**2 / m0**4 * y0.var(ddof=1) / len(y0) + y1.var(ddof=1) / len(y1) / m0**2
            stats.append(((m1 - m0) / m0, var))
        if stats is None or stats[0][1] + stats[1][1] <= 0:
            out.append(np.nan)
        else:
            out.append((stats[0][0] - stats[1][0]) ** 2 / (stats[0][1] + stats[1][1]))
    return np.array(out)


def test_backend_is_reported():
    assert kernels.BACKEND in ("compiled", "python")


@pytest.mark.parametrize("impl", BACKENDS)
def test_cell_moments(impl):
    codes = np.array([0, 0, 1, 2, 2, 2], dtype=np.int64)
    values = np.array([1.0, 3.0, 2.0, 4.0, 5.0, 6.0])
    counts, means, m2 = impl.cell_moments(codes, values, 4)
    np.testing.assert_array_equal(counts, [2, 1, 3, 0])
    np.testing.assert_allclose(means[:3], [2.0, 2.0, 5.0])
    assert np.isnan(means[3])
    np.testing.assert_allclose(m2, [2.0, 0.0, 2.0, 0.0])
    with pytest.raises(IndexError):
        impl.cell_moments(np.array([5], dtype=np.int64), np.array([1.0]), 2)


@pytest.mark.parametrize("impl", BACKENDS)
def test_ks_sorted_examples(impl):
    assert impl.ks_sorted(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert impl.ks_sorted(np.array([0.0, 0.0]), np.array([1.0, 1.0])) == 1.0
    assert impl.ks_sorted(np.array([1.0, 2, 3, 4]), np.array([1.5, 2.5, 3.5, 4.5])) == 0.25
    with pytest.raises(ValueError):
        impl.ks_sorted(np.array([]), np.array([1.0]))


@settings(max_examples=60)
@given(
    st.lists(st.integers(0, 6), min_size=1, max_size=40),
    st.lists(st.integers(0, 6), min_size=1, max_size=40),
)
def test_ks_sorted_matches_brute_force_with_ties(a, b):
    a = np.sort(np.array(a, dtype=float))
    b = np.sort(np.array(b, dtype=float))
    expected = brute_ks(a, b)
    for impl in BACKENDS:
        assert impl.ks_sorted(a, b) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("impl", BACKENDS)
def test_split_scan_matches_brute_force(impl):
    rng = np.random.default_rng(3)
    n = 400
    x = np.sort(rng.integers(0, 20, n).astype(float))
    w = rng.integers(0, 2, n).astype(np.uint8)
    y = rng.poisson(3.0, n).astype(float) + (x > 10) * w * 2.0
    thresholds = np.arange(0.5, 20.0, 1.0)
    got = impl.split_scan(x, w, y, thresholds, np.zeros(6), 5.0)
    want = brute_split_scores(x, w, y, thresholds, 5)
    np.testing.assert_allclose(got, want, rtol=1e-9, equal_nan=True)


@pytest.mark.parametrize("impl", BACKENDS)
def test_split_scan_routes_missing_to_larger_child(impl):
    x = np.array([0.0] * 6 + [1.0] * 10)
    w = np.array([0, 1] * 8, dtype=np.uint8)
    y = np.array([1.0, 2.0, 1.5, 2.5, 1.0, 2.0] + [2.0, 2.2, 2.5, 2.1, 1.9, 2.3, 2.2, 2.0, 2.4, 2.6])
    miss_vals = np.array([10.0, 10.0, 12.0, 12.0])
    miss_w = np.array([0, 0, 1, 1])
    missing = np.array([2, 20.0, 200.0, 2, 24.0, 288.0])
    got = impl.split_scan(x, w, y, np.array([0.5]), missing, 2.0)
    # the right child (10 units) is larger, so it absorbs the missing rows
    xf = np.concatenate([x, [2.0] * 4])
    wf = np.concatenate([w, miss_w]).astype(np.uint8)
    yf = np.concatenate([y, miss_vals])
    want = brute_split_scores(xf, wf, yf, [0.5], 2)
    np.testing.assert_allclose(got, want, rtol=1e-12)


@needs_compiled
def test_backends_agree_bitwise_on_random_inputs():
    rng = np.random.default_rng(11)
    codes = rng.integers(0, 4, 10_000)
    values = np.rint(rng.lognormal(1.0, 1.0, 10_000))
    for a, b in zip(_compiled.cell_moments(codes, values, 4), _kernels_py.cell_moments(codes, values, 4)):
        np.testing.assert_array_equal(a, b)

    x = np.sort(rng.normal(size=5000))
    w = rng.integers(0, 2, 5000).astype(np.uint8)
    y = np.rint(rng.lognormal(1.0, 1.0, 5000))
    thr = np.quantile(x, np.linspace(0.05, 0.95, 40))
    miss = np.array([30, 100.0, 900.0, 25, 90.0, 700.0])
    np.testing.assert_allclose(
        _compiled.split_scan(x, w, y, thr, miss, 50.0),
        _kernels_py.split_scan(x, w, y, thr, miss, 50.0),
        rtol=1e-13,
    )

    a = np.sort(np.rint(rng.lognormal(0, 1, 3000)))
    b = np.sort(np.rint(rng.lognormal(0.1, 1, 2000)))
    assert _compiled.ks_sorted(a, b) == _kernels_py.ks_sorted(a, b)
