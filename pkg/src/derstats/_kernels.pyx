# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. ``_kernels_py`` holds the numpy twin of every function here;
both must return the same numbers for the same inputs."""

import numpy as np
cimport numpy as cnp

from libc.math cimport NAN, fabs

cnp.import_array()


def cell_moments(const cnp.int64_t[::1] codes, const double[::1] values, Py_ssize_t ncells):
    cdef Py_ssize_t i, c, n = codes.shape[0]
    cdef double dev
    counts_arr = np.zeros(ncells, dtype=np.int64)
    sums_arr = np.zeros(ncells, dtype=np.float64)
    m2_arr = np.zeros(ncells, dtype=np.float64)
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef double[::1] sums = sums_arr
    cdef double[::1] m2 = m2_arr
    if values.shape[0] != n:
        raise ValueError("codes and values differ in length")
    for i in range(n):
        c = codes[i]
        if c < 0 or c >= ncells:
            raise IndexError(f"cell code {c} out of range")
        counts[c] += 1
        sums[c] += values[i]
    with nogil:
        for c in range(ncells):
            if counts[c] > 0:
                sums[c] = sums[c] / counts[c]
            else:
                sums[c] = NAN
        for i in range(n):
            c = codes[i]
            dev = values[i] - sums[c]
            m2[c] += dev * dev
    return counts_arr, sums_arr, m2_arr


cdef inline int _lift(double n0, double s0, double ss0, double n1, double s1, double ss1,
                      double *tau, double *var) noexcept nogil:
    cdef double m0, m1, v0, v1
    if n0 < 2 or n1 < 2:
        return 0
    m0 = s0 / n0
    m1 = s1 / n1
    if m0 <= 0:
        return 0
    v0 = (ss0 - s0 * m0) / (n0 - 1)
    v1 = (ss1 - s1 * m1) / (n1 - 1)
    if v0 < 0:
        v0 = 0
    if v1 < 0:
        v1 = 0
    tau[0] = (m1 - m0) / m0
    var[0] = (m1 * m1) / (m0 * m0 * m0 * m0) * v0 / n0 + v1 / (m0 * m0 * n1)
    return 1


def split_scan(const double[::1] x, const cnp.uint8_t[::1] w, const double[::1] y,
               const double[::1] thresholds, const double[::1] missing, double min_leaf):
    cdef Py_ssize_t n = x.shape[0], nt = thresholds.shape[0]
    cdef Py_ssize_t i = 0, k, i_m
    cdef double t
    cdef double ln0 = 0, ls0 = 0, lss0 = 0, ln1 = 0, ls1 = 0, lss1 = 0
    cdef double tn0 = 0, ts0 = 0, tss0 = 0, tn1 = 0, ts1 = 0, tss1 = 0
    cdef double a[6]
    cdef double b[6]
    cdef double tau_l, var_l, tau_r, var_r, denom
    out_arr = np.full(nt, np.nan)
    cdef double[::1] out = out_arr
    if w.shape[0] != n or y.shape[0] != n:
        raise ValueError("x, w and y differ in length")
    if missing.shape[0] != 6:
        raise ValueError("missing must hold (n0, s0, ss0, n1, s1, ss1)")
    with nogil:
        for i in range(n):
            if w[i]:
                tn1 += 1
                ts1 += y[i]
                tss1 += y[i] * y[i]
            else:
                tn0 += 1
                ts0 += y[i]
                tss0 += y[i] * y[i]
        i = 0
        for k in range(nt):
            t = thresholds[k]
            while i < n and x[i] <= t:
                if w[i]:
                    ln1 += 1
                    ls1 += y[i]
                    lss1 += y[i] * y[i]
                else:
                    ln0 += 1
                    ls0 += y[i]
                    lss0 += y[i] * y[i]
                i += 1
            a[0] = ln0; a[1] = ls0; a[2] = lss0; a[3] = ln1; a[4] = ls1; a[5] = lss1
            b[0] = tn0 - ln0; b[1] = ts0 - ls0; b[2] = tss0 - lss0
            b[3] = tn1 - ln1; b[4] = ts1 - ls1; b[5] = tss1 - lss1
            if a[0] + a[3] >= b[0] + b[3]:
                for i_m in range(6):
                    a[i_m] = a[i_m] + missing[i_m]
            else:
                for i_m in range(6):
                    b[i_m] = b[i_m] + missing[i_m]
            if a[0] < min_leaf or a[3] < min_leaf or b[0] < min_leaf or b[3] < min_leaf:
                continue
            if not _lift(a[0], a[1], a[2], a[3], a[4], a[5], &tau_l, &var_l):
                continue
            if not _lift(b[0], b[1], b[2], b[3], b[4], b[5], &tau_r, &var_r):
                continue
            denom = var_l + var_r
            if denom <= 0:
                continue
            out[k] = (tau_l - tau_r) * (tau_l - tau_r) / denom
    return out_arr


def ks_sorted(const double[::1] a, const double[::1] b):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0]
    cdef Py_ssize_t i = 0, j = 0
    cdef double v, d, best = 0.0
    if na == 0 or nb == 0:
        raise ValueError("empty sample")
    with nogil:
        while i < na and j < nb:
            v = a[i] if a[i] <= b[j] else b[j]
            while i < na and a[i] == v:
                i += 1
            while j < nb and b[j] == v:
                j += 1
            d = fabs(<double>i / na - <double>j / nb)
            if d > best:
                best = d
    # once either sample is exhausted the gap only shrinks toward |1 - 1| = 0
    return best
