"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--n 1000000]

Prints one line per kernel with the best wall time of each backend, the
speedup, and the largest absolute difference between their outputs.
"""

import argparse
import time

import numpy as np

from derstats import _kernels_py

try:
    from derstats import _kernels
except ImportError:
    _kernels = None


def best_time(fn, args, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_diff(a, b):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    ok = np.isfinite(a) & np.isfinite(b)
    return float(np.max(np.abs(a[ok] - b[ok]), initial=0.0))


def cases(n, rng):
    codes = rng.integers(0, 8, n)
    values = rng.lognormal(1.0, 1.0, n) * (rng.random(n) < 0.6)
    x = np.sort(rng.random(n))
    w = rng.integers(0, 2, n).astype(np.uint8)
    thresholds = np.quantile(x, np.linspace(0.01, 0.99, 64))
    a, b = np.sort(rng.lognormal(0, 1, n)), np.sort(rng.lognormal(0.01, 1, n))
    return {
        "cell_moments": (codes, values, 8),
        "split_scan": (x, w, values, thresholds, np.zeros(6), 500.0),
        "ks_sorted": (a, b),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if _kernels is None:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':<14}{'python s':>12}{'compiled s':>12}{'speedup':>10}{'max diff':>12}")
    for name, fargs in cases(args.n, rng).items():
        tp, op = best_time(getattr(_kernels_py, name), fargs, args.repeat)
        if _kernels is None:
            print(f"{name:<14}{tp:>12.4f}")
            continue
        tc, oc = best_time(getattr(_kernels, name), fargs, args.repeat)
        if isinstance(op, tuple):
            diff = max(max_diff(p, c) for p, c in zip(op, oc))
        else:
            diff = max_diff(op, oc)
        print(f"{name:<14}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x{diff:>12.2e}")


if __name__ == "__main__":
    main()
