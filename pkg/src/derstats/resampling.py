"""Resampling benchmarks for the DER change and a numerical delta-method oracle.

Both resampling schemes work on counts of distinct ``(group, value)``
categories rather than on unit indices. Drawing multinomial counts over the
categories of a variant is exactly a with-replacement resample of its units,
and drawing multivariate hypergeometric counts from the pooled categories is
exactly a random relabelling of variants. Count-like metrics have few
distinct values, which makes a replicate cost O(categories) instead of O(n).

Every replicate owns an independent Philox stream keyed by
``(seed, replicate index)``, so results do not depend on evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_stats import (
    DerDelta,
    DerEstimate,
    combine,
    der_gradient,
    der_statistic,
    group_summaries,
    _group_codes,
)
from .errors import ResampleDegenerate, UndefinedVariance

SCHEMES = ("bootstrap", "permutation")
DEFAULT_REPLICATES = 1000
MAX_DEGENERATE_FRACTION = 0.01


@dataclass(frozen=True)
class ResamplingPlan:
    scheme: str = "bootstrap"
    replicates: int = DEFAULT_REPLICATES
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.replicates < 100:
            raise ValueError(f"need at least 100 replicates, got {self.replicates}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class MomentCovariance:
    sigma2: np.ndarray  # 4x4 over (I_{G=1}, I_{G=2}, I_{G=1} Y, I_{G=2} Y)
    lambda2: np.ndarray  # 2x2 covariance of the two conditional means


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


class _Categories:
    """Distinct (group, value) pairs of one sample with their multiplicities."""

    def __init__(self, codes, values, k):
        keys = np.stack([codes.astype(np.float64), values])
        uniq, counts = np.unique(keys, axis=1, return_counts=True)
        self.group = uniq[0].astype(np.int64)
        self.value = uniq[1]
        self.counts = counts.astype(np.int64)
        self.k = k
        self.n = int(counts.sum())

    def group_means(self, draw):
        sizes = np.bincount(self.group, weights=draw, minlength=self.k)
        sums = np.bincount(self.group, weights=draw * self.value, minlength=self.k)
        return sizes, sums


def _encode(sample, group_universe):
    groups, values = sample
    values = np.asarray(values, dtype=np.float64)
    codes, universe = _group_codes(groups, group_universe)
    return codes, values, len(universe)


def _der_or_nan(sizes, sums):
    if np.any(sizes == 0) or sums.sum() <= 0:
        return math.nan
    return der_statistic(sums / sizes)


def resample_der(control, treatment, group_universe, plan: ResamplingPlan) -> tuple[np.ndarray, np.ndarray]:
    """Replicate DER values ``(d_control, d_treatment)`` under ``plan``.

    Replicates in which a group vanishes or all means are zero are dropped;
    more than 1% of such replicates raises ``ResampleDegenerate``.
    """
    c_codes, c_vals, k = _encode(control, group_universe)
    t_codes, t_vals, _ = _encode(treatment, group_universe)
    # validates preconditions (every group present in both variants)
    group_summaries(c_codes, c_vals, range(k))
    group_summaries(t_codes, t_vals, range(k))

    out = np.full((2, plan.replicates), math.nan)
    if plan.scheme == "bootstrap":
        cats = [_Categories(c_codes, c_vals, k), _Categories(t_codes, t_vals, k)]
        probs = [c.counts / c.n for c in cats]
        for b in range(plan.replicates):
            rng = replicate_rng(plan.seed, b)
            for v, cat in enumerate(cats):
                draw = rng.multinomial(cat.n, probs[v]).astype(np.float64)
                out[v, b] = _der_or_nan(*cat.group_means(draw))
    else:
        pooled = _Categories(np.concatenate([c_codes, t_codes]), np.concatenate([c_vals, t_vals]), k)
        n_treat = t_vals.size
        for b in range(plan.replicates):
            rng = replicate_rng(plan.seed, b)
            treat = rng.multivariate_hypergeometric(pooled.counts, n_treat, method="marginals")
            ctrl = pooled.counts - treat
            out[0, b] = _der_or_nan(*pooled.group_means(ctrl.astype(np.float64)))
            out[1, b] = _der_or_nan(*pooled.group_means(treat.astype(np.float64)))

    keep = ~np.isnan(out).any(axis=0)
    dropped = plan.replicates - int(keep.sum())
    if dropped > MAX_DEGENERATE_FRACTION * plan.replicates:
        raise ResampleDegenerate(
            f"{dropped} of {plan.replicates} {plan.scheme} replicates had a missing group or zero means"
        )
    return out[0, keep], out[1, keep]


def _variance(x: np.ndarray) -> float:
    # np.var reduces with pairwise summation in replicate order
    return float(np.var(x, ddof=1))


def bootstrap_variance(control, treatment, group_universe, plan: ResamplingPlan) -> float:
    """Bootstrap variance of the DER change, resampling units within each variant."""
    if plan.scheme != "bootstrap":
        raise ValueError("plan.scheme must be 'bootstrap'")
    d_c, d_t = resample_der(control, treatment, group_universe, plan)
    return _variance(d_t - d_c)


def permutation_variance(control, treatment, group_universe, plan: ResamplingPlan) -> float:
    """Variance of the DER change when variant labels are shuffled across units."""
    if plan.scheme != "permutation":
        raise ValueError("plan.scheme must be 'permutation'")
    d_c, d_t = resample_der(control, treatment, group_universe, plan)
    return _variance(d_t - d_c)


def resampled_der_delta(control, treatment, group_universe, plan: ResamplingPlan) -> DerDelta:
    """DER change whose per-variant variances come from resampling replicates."""
    d_c, d_t = resample_der(control, treatment, group_universe, plan)
    estimates = []
    for sample, reps in ((control, d_c), (treatment, d_t)):
        summaries = group_summaries(*sample, group_universe)
        means = tuple(g.mean for g in summaries)
        estimates.append(DerEstimate(len(means), means, der_statistic(means), _variance(reps)))
    return combine(*estimates, method=plan.scheme)


def _sigma2(p1, p2, mu1, mu2, var1, var2) -> np.ndarray:
    return np.array([
        [p1 * (1 - p1), -p1 * p2, p1 * (1 - p1) * mu1, -p1 * p2 * mu2],
        [-p1 * p2, p2 * (1 - p2), -p1 * p2 * mu1, p2 * (1 - p2) * mu2],
        [p1 * (1 - p1) * mu1, -p1 * p2 * mu1, p1 * var1 + p1 * (1 - p1) * mu1**2, -p1 * p2 * mu1 * mu2],
        [-p1 * p2 * mu2, p2 * (1 - p2) * mu2, -p1 * p2 * mu1 * mu2, p2 * var2 + p2 * (1 - p2) * mu2**2],
    ])


def moment_covariance_from_summaries(summaries) -> MomentCovariance:
    """Population covariance of the indicator/response moments and, via the
    Jacobian of the division m_g / p_g, the covariance of the group means."""
    if len(summaries) != 2:
        raise ValueError("moment covariance is built for exactly two groups")
    for g in summaries:
        if not g.variance_defined:
            raise UndefinedVariance(f"group {g.group_label!r} has n = {g.n} < 2")
    g1, g2 = summaries
    n = g1.n + g2.n
    p1, p2 = g1.n / n, g2.n / n
    sigma2 = _sigma2(p1, p2, g1.mean, g2.mean, g1.variance, g2.variance)
    m1, m2 = p1 * g1.mean, p2 * g2.mean
    jac = np.array([
        [-m1 / p1**2, 0.0, 1.0 / p1, 0.0],
        [0.0, -m2 / p2**2, 0.0, 1.0 / p2],
    ])
    lambda2 = jac @ sigma2 @ jac.T / n
    return MomentCovariance(sigma2, lambda2)


def moment_covariance(groups, values, group_universe) -> MomentCovariance:
    return moment_covariance_from_summaries(group_summaries(groups, values, group_universe))


def delta_oracle_variance(summaries) -> float:
    """Variance of the plug-in DER by explicit chain rule: grad D . Lambda2 . grad D^T."""
    cov = moment_covariance_from_summaries(summaries)
    grad = der_gradient([g.mean for g in summaries])
    return float(grad @ cov.lambda2 @ grad)
