"""Closed-form DER statistics, their delta-method variances and relative lifts.

The DER (deviation from equal representation) statistic of ``k`` nonnegative
group means is

    D = k / (k - 1) * sum_i (mu_i / sum_j mu_j - 1 / k) ** 2

which is 0 at parity and 1 when a single group carries the whole metric.
For ``k = 2`` the plug-in estimate is asymptotically normal with variance

    16 (m1 - m2)^2 / (n (m1 + m2)^6) * (m2^2 s1^2 / p1 + m1^2 s2^2 / p2)

Note the cross pairing: group 1's mean multiplies group 2's scaled variance.

Sign convention: ``DerDelta.delta`` is treatment minus control, so a negative
delta means the treatment moved the groups *closer* to parity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Hashable, NamedTuple, Sequence

import numpy as np

from .errors import (
    DegenerateMeans,
    MissingGroup,
    NonpositiveControlMean,
    TooFewGroups,
    UndefinedVariance,
    ValidationError,
    ZeroVariance,
)
from .kernels import cell_moments

_SQRT2 = math.sqrt(2.0)


def normal_two_sided_p(z: float) -> float:
    return math.erfc(abs(z) / _SQRT2)


def normal_quantile(level: float) -> float:
    """Two-sided critical value, e.g. 1.95996... for ``level=0.95``."""
    if not 0.0 < level < 1.0:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    return NormalDist().inv_cdf(0.5 + level / 2.0)


class Moments(NamedTuple):
    """Count, mean and sample variance (denominator n - 1) of one cell."""

    n: int
    mean: float
    variance: float

    @classmethod
    def from_values(cls, values) -> "Moments":
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        mean = float(values.mean()) if n else math.nan
        var = float(values.var(ddof=1)) if n >= 2 else math.nan
        return cls(n, mean, var)


@dataclass(frozen=True)
class GroupSummary:
    group_label: Hashable
    n: int
    mean: float
    variance: float  # nan when n < 2
    fraction: float

    @property
    def variance_defined(self) -> bool:
        return self.n >= 2 and not math.isnan(self.variance)

    @property
    def moments(self) -> Moments:
        return Moments(self.n, self.mean, self.variance)


@dataclass(frozen=True)
class DerEstimate:
    k: int
    group_means: tuple
    value: float
    variance: float  # nan when no closed form or resampling estimate is available

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class DerDelta:
    control: DerEstimate
    treatment: DerEstimate
    delta: float
    variance: float
    z_score: float
    p_value: float
    variance_method: str = "delta"

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance)

    def confidence_interval(self, level: float = 0.95) -> tuple[float, float]:
        half = normal_quantile(level) * self.std_error
        return self.delta - half, self.delta + half

    @property
    def unsquared_delta(self) -> float:
        """sqrt(D_treatment) - sqrt(D_control); carries the sign of ``delta``."""
        return math.sqrt(self.treatment.value) - math.sqrt(self.control.value)

    def unsquared_variance(self) -> float:
        """Delta-method variance of ``unsquared_delta``; nan at exact parity."""
        total = 0.0
        for est in (self.control, self.treatment):
            if est.value <= 0.0:
                return math.nan
            total += est.variance / (4.0 * est.value)
        return total


@dataclass(frozen=True)
class RelativeLift:
    mean_control: float
    mean_treatment: float
    lift: float
    variance: float
    ci_low: float
    ci_high: float
    level: float = 0.95
    n_control: int = 0
    n_treatment: int = 0

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance)

    def overlaps(self, other: "RelativeLift") -> bool:
        return not (self.ci_high < other.ci_low or other.ci_high < self.ci_low)


@dataclass(frozen=True)
class LiftGap:
    """Difference of two groups' relative lifts, first minus second."""

    groups: tuple
    estimate: float
    variance: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class RepresentationReport:
    metric_name: str
    overall_lift: RelativeLift
    der_delta: DerDelta
    per_group_lifts: dict = field(default_factory=dict)
    lift_gap: LiftGap | None = None

    @property
    def unsquared_der_delta(self) -> float:
        return self.der_delta.unsquared_delta


def _means_array(means) -> np.ndarray:
    arr = np.asarray(means, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("means must be a 1-d vector")
    if arr.size < 2:
        raise TooFewGroups(f"need at least 2 groups, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise DegenerateMeans("means must be finite")
    if np.any(arr < 0):
        raise DegenerateMeans(f"means must be nonnegative, got {arr.tolist()}")
    if arr.sum() <= 0:
        raise DegenerateMeans("all group means are zero; DER is undefined")
    return arr


def der_statistic(means) -> float:
    arr = _means_array(means)
    k = arr.size
    shares = arr / arr.sum()
    value = k / (k - 1) * float(np.sum((shares - 1.0 / k) ** 2))
    return min(max(value, 0.0), 1.0)


def der_gradient(means) -> np.ndarray:
    """Gradient of ``der_statistic`` with respect to the group means.

    dD/dmu_g = 2k / ((k - 1) u) * (s_g - sum_i s_i^2), with u the total and s
    the shares; for k = 2 this is 4 (mu_g - v/u) / u^2 with v = sum mu_i^2.
    """
    arr = _means_array(means)
    k = arr.size
    u = arr.sum()
    shares = arr / u
    return 2.0 * k / ((k - 1) * u) * (shares - np.sum(shares * shares))


def _group_codes(groups, group_universe) -> tuple[np.ndarray, list]:
    universe = list(group_universe)
    index = {g: i for i, g in enumerate(universe)}
    if len(index) != len(universe):
        raise ValueError("group_universe contains duplicates")
    groups = np.asarray(groups)
    uniq, inverse = np.unique(groups, return_inverse=True)
    try:
        lookup = np.array([index[_py(g)] for g in uniq], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"group {exc.args[0]!r} is not in the group universe {universe}") from None
    return lookup[inverse.reshape(-1)], universe


def _py(value):
    return value.item() if isinstance(value, np.generic) else value


def group_summaries(groups, values, group_universe) -> list[GroupSummary]:
    """Per-group count, mean, sample variance and share of the sample.

    Groups are reported in ``group_universe`` order. Raises ``MissingGroup``
    if a group of the universe has no rows.
    """
    values = np.asarray(values, dtype=np.float64)
    codes, universe = _group_codes(groups, group_universe)
    if codes.shape != values.shape:
        raise ValueError("groups and values differ in length")
    if not np.all(np.isfinite(values)):
        raise ValidationError("responses must be finite")
    counts, means, m2 = cell_moments(codes, values, len(universe))
    missing = [universe[i] for i in np.flatnonzero(counts == 0)]
    if missing:
        raise MissingGroup(f"no rows for group(s) {missing}")
    total = int(counts.sum())
    out = []
    for i, label in enumerate(universe):
        n = int(counts[i])
        var = float(m2[i] / (n - 1)) if n >= 2 else math.nan
        out.append(GroupSummary(label, n, float(means[i]), var, n / total))
    return out


def der_variance_k2(summaries: Sequence[GroupSummary]) -> float:
    """Delta-method variance of the plug-in DER for two groups."""
    if len(summaries) != 2:
        raise ValueError("closed-form variance is only defined for k = 2")
    g1, g2 = summaries
    for g in summaries:
        if not g.variance_defined:
            raise UndefinedVariance(f"group {g.group_label!r} has n = {g.n} < 2")
    m1, m2 = g1.mean, g2.mean
    if m1 + m2 <= 0:
        raise DegenerateMeans("both group means are zero")
    n = g1.n + g2.n
    p1, p2 = g1.n / n, g2.n / n
    scale = 16.0 * (m1 - m2) ** 2 / (n * (m1 + m2) ** 6)
    return scale * (m2 * m2 * g1.variance / p1 + m1 * m1 * g2.variance / p2)


def der_estimate(groups, values, group_universe) -> DerEstimate:
    summaries = group_summaries(groups, values, group_universe)
    return estimate_from_summaries(summaries)


def estimate_from_summaries(summaries: Sequence[GroupSummary], variance: float | None = None) -> DerEstimate:
    means = tuple(g.mean for g in summaries)
    value = der_statistic(means)
    if variance is None:
        variance = der_variance_k2(summaries) if len(summaries) == 2 else math.nan
    return DerEstimate(len(summaries), means, value, variance)


def combine(control: DerEstimate, treatment: DerEstimate, method: str = "delta") -> DerDelta:
    """Treatment-minus-control contrast of two independent DER estimates."""
    delta = treatment.value - control.value
    variance = control.variance + treatment.variance
    if math.isnan(variance):
        raise UndefinedVariance("no variance available; k > 2 needs a resampling plan")
    if variance > 0:
        z = delta / math.sqrt(variance)
        p = normal_two_sided_p(z)
    else:
        z, p = math.nan, math.nan
    return DerDelta(control, treatment, delta, variance, z, p, method)


def der_delta(control, treatment, group_universe, plan=None) -> DerDelta:
    """DER change between two variants.

    ``control`` and ``treatment`` are ``(groups, values)`` pairs. Without a
    ``plan`` the closed-form k = 2 variance is used; with a
    :class:`~derstats.resampling.ResamplingPlan` each variant's variance comes
    from resampling (required for k > 2).

    A contrast with exactly zero variance has no test: ``z_score`` and
    ``p_value`` are nan and :func:`require_test` raises ``ZeroVariance``.
    """
    if plan is not None:
        from .resampling import resampled_der_delta

        return resampled_der_delta(control, treatment, group_universe, plan)
    c = der_estimate(*control, group_universe)
    t = der_estimate(*treatment, group_universe)
    return combine(c, t)


def require_test(result: DerDelta) -> DerDelta:
    if not result.variance > 0:
        raise ZeroVariance("variance of the DER change is zero; no test is possible")
    return result


def relative_lift(control, treatment, level: float = 0.95) -> RelativeLift:
    """Relative lift (treatment - control) / control with a delta-method CI.

    ``control`` and ``treatment`` are ``(n, mean, variance)`` triples.
    """
    n0, y0, s0 = control
    n1, y1, s1 = treatment
    if n0 < 2 or n1 < 2 or math.isnan(s0) or math.isnan(s1):
        raise UndefinedVariance(f"relative lift needs n >= 2 per arm, got {n0} and {n1}")
    if not y0 > 0:
        raise NonpositiveControlMean(f"control mean must be positive, got {y0}")
    lift = (y1 - y0) / y0
    var = (y1 * y1) / y0**4 * (s0 / n0) + (s1 / n1) / (y0 * y0)
    half = normal_quantile(level) * math.sqrt(var)
    return RelativeLift(y0, y1, lift, var, lift - half, lift + half, level, int(n0), int(n1))


def lift_gap(first: RelativeLift, second: RelativeLift, groups=(None, None), level: float = 0.95) -> LiftGap:
    # disjoint groups give independent lifts, so variances add
    est = first.lift - second.lift
    var = first.variance + second.variance
    half = normal_quantile(level) * math.sqrt(var)
    return LiftGap(tuple(groups), est, var, est - half, est + half)


def representation_report(control, treatment, group_universe, metric_name: str = "metric",
                          level: float = 0.95, plan=None) -> RepresentationReport:
    """Overall lift, DER change, per-group lifts and (k = 2) the lift gap."""
    cg, cv = (np.asarray(a) for a in control)
    tg, tv = (np.asarray(a) for a in treatment)
    overall = relative_lift(Moments.from_values(cv), Moments.from_values(tv), level)
    delta = der_delta((cg, cv), (tg, tv), group_universe, plan=plan)
    c_sum = group_summaries(cg, cv, group_universe)
    t_sum = group_summaries(tg, tv, group_universe)
    per_group = {
        c.group_label: relative_lift(c.moments, t.moments, level) for c, t in zip(c_sum, t_sum)
    }
    gap = None
    if len(c_sum) == 2:
        g1, g2 = (c.group_label for c in c_sum)
        gap = lift_gap(per_group[g1], per_group[g2], (g1, g2), level)
    return RepresentationReport(metric_name, overall, delta, per_group, gap)
