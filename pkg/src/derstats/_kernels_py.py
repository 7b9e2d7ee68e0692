"""Numpy implementations of the compiled kernels in ``_kernels.pyx``.

Each function mirrors its compiled twin operation for operation (sequential
sums, identical formula order) so both backends agree to the last bit on
ordinary inputs.
"""

import numpy as np


def cell_moments(codes, values, ncells):
    codes = np.asarray(codes, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if codes.shape != values.shape:
        raise ValueError("codes and values differ in length")
    if codes.size and (codes.min() < 0 or codes.max() >= ncells):
        raise IndexError("cell code out of range")
    counts = np.bincount(codes, minlength=ncells).astype(np.int64)
    sums = np.bincount(codes, weights=values, minlength=ncells)
    means = np.full(ncells, np.nan)
    np.divide(sums, counts, out=means, where=counts > 0)
    dev = values - means[codes]
    m2 = np.bincount(codes, weights=dev * dev, minlength=ncells)
    return counts, means, m2


def _lift(n0, s0, ss0, n1, s1, ss1):
    with np.errstate(divide="ignore", invalid="ignore"):
        m0 = s0 / n0
        m1 = s1 / n1
        v0 = np.maximum((ss0 - s0 * m0) / (n0 - 1), 0.0)
        v1 = np.maximum((ss1 - s1 * m1) / (n1 - 1), 0.0)
        tau = (m1 - m0) / m0
        var = (m1 * m1) / (m0 * m0 * m0 * m0) * v0 / n0 + v1 / (m0 * m0 * n1)
    ok = (n0 >= 2) & (n1 >= 2) & (m0 > 0)
    return tau, var, ok


def split_scan(x, w, y, thresholds, missing, min_leaf):
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.uint8)
    y = np.asarray(y, dtype=np.float64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    missing = np.asarray(missing, dtype=np.float64)
    if w.shape != x.shape or y.shape != x.shape:
        raise ValueError("x, w and y differ in length")
    if missing.shape != (6,):
        raise ValueError("missing must hold (n0, s0, ss0, n1, s1, ss1)")

    treated = w.astype(bool)
    zero = np.zeros(1)
    cols = []
    for mask in (~treated, treated):
        for term in (mask.astype(np.float64), np.where(mask, y, 0.0), np.where(mask, y * y, 0.0)):
            cols.append(np.concatenate([zero, np.cumsum(term)]))
    cum = np.stack(cols)  # (6, n + 1), prefix sums in scan order
    pos = np.searchsorted(x, thresholds, side="right")
    left = cum[:, pos]
    right = cum[:, -1:] - left

    to_left = left[0] + left[3] >= right[0] + right[3]
    left = left + np.where(to_left, 1.0, 0.0) * missing[:, None]
    right = right + np.where(to_left, 0.0, 1.0) * missing[:, None]

    tau_l, var_l, ok_l = _lift(*left)
    tau_r, var_r, ok_r = _lift(*right)
    denom = var_l + var_r
    big_enough = (
        (left[0] >= min_leaf) & (left[3] >= min_leaf) & (right[0] >= min_leaf) & (right[3] >= min_leaf)
    )
    ok = big_enough & ok_l & ok_r & (denom > 0)
    out = np.full(thresholds.shape[0], np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (tau_l - tau_r) * (tau_l - tau_r) / denom
    out[ok] = score[ok]
    return out


def ks_sorted(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    grid = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, grid, side="right") / a.size
    cdf_b = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))
