"""Backend selection for the hot loops.

The compiled extension ``derstats._kernels`` is used when it was built at
install time. Setting ``DERSTATS_PURE_PYTHON=1`` in the environment forces the
numpy fallback, which is also used automatically when the extension is missing.
"""

import os

import numpy as np

from . import _kernels_py

if os.environ.get("DERSTATS_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"
    else:
        BACKEND = "compiled"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def cell_moments(codes, values, ncells):
    """Per-cell (counts, means, sums of squared deviations) in two passes."""
    return _impl.cell_moments(np.ascontiguousarray(codes, dtype=np.int64), _f64(values), int(ncells))


def split_scan(x, w, y, thresholds, missing, min_leaf):
    """Squared t-statistic of relative lifts for each ``x <= threshold`` split.

    ``x`` must be sorted ascending; infeasible thresholds score nan.
    """
    return _impl.split_scan(
        _f64(x), np.ascontiguousarray(w, dtype=np.uint8), _f64(y), _f64(thresholds), _f64(missing), float(min_leaf)
    )


def ks_sorted(a, b):
    """sup |F_a - F_b| for two ascending samples."""
    return float(_impl.ks_sorted(_f64(a), _f64(b)))

__all__ = ["BACKEND", "cell_moments", "split_scan", "ks_sorted"]
