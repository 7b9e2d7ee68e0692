"""Bonferroni alerting over every (experiment, metric, variant pair).

A scan computes the DER change for each comparison, counts the comparisons
that produced a test (``n``), and alerts on ``p <= alpha / n``. Comparisons
that fail validation or computation are listed as skipped with their reasons
and consume no share of the error budget.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import NamedTuple, Sequence

import numpy as np

from .core_stats import DerDelta, der_delta, normal_quantile, representation_report, require_test
from .errors import DerstatsError
from .ingest import ExperimentDataset, PAIR_MODES, comparison_issues, variant_pairs
from .resampling import ResamplingPlan

VARIANCE_METHODS = ("delta", "bootstrap", "permutation")


@dataclass(frozen=True)
class AlertConfig:
    group_universe: tuple
    metrics: tuple
    alpha: float = 0.05
    variant_pairs: object = "control-vs-each"
    control: str = "control"
    variance_method: str = "delta"
    replicates: int = 1000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "group_universe", tuple(str(g) for g in self.group_universe))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.metrics:
            raise ValueError("no metrics configured")
        if len(self.group_universe) < 2:
            raise ValueError("group universe needs at least two groups")
        if self.variance_method not in VARIANCE_METHODS:
            raise ValueError(f"variance_method must be one of {VARIANCE_METHODS}")
        pairs = self.variant_pairs
        if isinstance(pairs, str):
            if pairs not in PAIR_MODES:
                raise ValueError(f"variant_pairs must be one of {PAIR_MODES} or a list of pairs")
        else:
            pairs = tuple(tuple(str(v) for v in p) for p in pairs)
            if not pairs or any(len(p) != 2 or p[0] == p[1] for p in pairs):
                raise ValueError("explicit variant_pairs must be distinct (baseline, other) pairs")
            object.__setattr__(self, "variant_pairs", pairs)

    @classmethod
    def from_mapping(cls, data: dict, **overrides) -> "AlertConfig":
        scan = dict(data.get("scan", {}))
        base = data.get("data", {})
        scan.setdefault("metrics", base.get("metrics"))
        scan.setdefault("group_universe", base.get("group_universe"))
        scan.update({k: v for k, v in overrides.items() if v is not None})
        missing = [k for k in ("metrics", "group_universe") if not scan.get(k)]
        if missing:
            raise ValueError(f"config is missing {missing}")
        return cls(**scan)

    @classmethod
    def from_toml(cls, path, **overrides) -> "AlertConfig":
        import tomli

        with open(path, "rb") as fh:
            return cls.from_mapping(tomli.load(fh), **overrides)

    def resampling_plan(self, index: int) -> ResamplingPlan | None:
        if self.variance_method == "delta":
            return None
        # an independent seed per comparison, stable under reordering of the others
        seed = int(np.random.SeedSequence([self.seed, index]).generate_state(1, np.uint64)[0])
        return ResamplingPlan(self.variance_method, self.replicates, seed)


class Comparison(NamedTuple):
    experiment_id: str
    metric: str
    variant_pair: tuple

    def label(self) -> str:
        return f"{self.experiment_id}/{self.metric}/{self.variant_pair[0]}-vs-{self.variant_pair[1]}"


@dataclass(frozen=True)
class Skipped:
    comparison: Comparison
    reasons: tuple


@dataclass(frozen=True)
class ComparisonPlan:
    attempted: tuple
    skipped: tuple

    @property
    def n(self) -> int:
        return len(self.attempted)


def enumerate_comparisons(datasets: Sequence[ExperimentDataset], config: AlertConfig) -> ComparisonPlan:
    """All comparisons in lexicographic order, split into attempted and skipped."""
    seen = set()
    attempted, skipped = [], []
    for ds in sorted(datasets, key=lambda d: d.experiment_id):
        if ds.experiment_id in seen:
            raise ValueError(f"experiment {ds.experiment_id!r} given twice")
        seen.add(ds.experiment_id)
        pairs = sorted(variant_pairs(ds, config.variant_pairs, config.control))
        for metric in sorted(config.metrics):
            for pair in pairs:
                comp = Comparison(ds.experiment_id, metric, pair)
                issues = comparison_issues(ds, metric, pair, config.group_universe)
                if issues:
                    skipped.append(Skipped(comp, tuple(f"{i.code}: {i.message}" for i in issues)))
                else:
                    attempted.append(comp)
    return ComparisonPlan(tuple(attempted), tuple(skipped))


@dataclass(frozen=True)
class ComparisonResult:
    comparison: Comparison
    der_delta: DerDelta

    def row(self) -> dict:
        d = self.der_delta
        return {"experiment_id": self.comparison.experiment_id, "metric": self.comparison.metric,
                "baseline": self.comparison.variant_pair[0], "variant": self.comparison.variant_pair[1],
                "d_baseline": d.control.value, "d_variant": d.treatment.value, "delta": d.delta,
                "variance": d.variance, "z": d.z_score, "p_value": d.p_value, "method": d.variance_method}


@dataclass(frozen=True)
class Alert:
    experiment_id: str
    metric: str
    variant_pair: tuple
    der_delta: DerDelta
    threshold: float
    n_comparisons: int


@dataclass
class AlertReport:
    alerts: list
    skipped: list
    results: list
    n_comparisons: int
    threshold: float
    config: AlertConfig
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def alert_keys(self) -> set:
        return {(a.experiment_id, a.metric, a.variant_pair) for a in self.alerts}

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        if not isinstance(cfg["variant_pairs"], str):
            cfg["variant_pairs"] = [list(p) for p in cfg["variant_pairs"]]
        alert_keys = self.alert_keys()
        table = []
        for r in self.results:
            row = r.row()
            row["alert"] = tuple(r.comparison) in alert_keys
            table.append(row)
        return {
            "timestamp": self.timestamp,
            "config": cfg,
            "n_comparisons": self.n_comparisons,
            "threshold": self.threshold,
            "alerts": [{"experiment_id": a.experiment_id, "metric": a.metric, "variant_pair": list(a.variant_pair),
                        "delta": a.der_delta.delta, "z": a.der_delta.z_score, "p_value": a.der_delta.p_value,
                        "threshold": a.threshold, "n_comparisons": a.n_comparisons} for a in self.alerts],
            "skipped": [{"experiment_id": s.comparison.experiment_id, "metric": s.comparison.metric,
                         "variant_pair": list(s.comparison.variant_pair), "reasons": list(s.reasons)}
                        for s in self.skipped],
            "comparisons": table,
        }

    def to_json(self) -> str:
        return json.dumps(_finite(self.to_dict()), indent=2, allow_nan=False)


def _finite(obj):
    """nan/inf become null so the report stays strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def comparison_delta(ds: ExperimentDataset, comp: Comparison, config: AlertConfig, index: int = 0) -> DerDelta:
    """DER change of one comparison; raises ``ZeroVariance`` when untestable."""
    base, other = comp.variant_pair
    result = der_delta(ds.sample(base, comp.metric), ds.sample(other, comp.metric), config.group_universe,
                       plan=config.resampling_plan(index))
    return require_test(result)


def scan(datasets: Sequence[ExperimentDataset], config: AlertConfig, timestamp: str | None = None) -> AlertReport:
    """Compute every comparison and alert where ``p <= alpha / n``."""
    plan = enumerate_comparisons(datasets, config)
    by_id = {d.experiment_id: d for d in datasets}

    def run(item):
        index, comp = item
        try:
            return comp, comparison_delta(by_id[comp.experiment_id], comp, config, index), None
        except DerstatsError as exc:
            return comp, None, f"{exc.code}: {exc}"

    items = list(enumerate(plan.attempted))
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            outcomes = list(pool.map(run, items))
    else:
        outcomes = [run(item) for item in items]

    results, skipped = [], list(plan.skipped)
    for comp, delta, reason in outcomes:
        if delta is None:
            skipped.append(Skipped(comp, (reason,)))
        else:
            results.append(ComparisonResult(comp, delta))
    skipped.sort(key=lambda s: s.comparison)
    n = len(results)
    threshold = config.alpha / n if n else 0.0
    alerts = [Alert(*r.comparison, r.der_delta, threshold, n) for r in results if r.der_delta.p_value <= threshold]
    report = AlertReport(alerts, skipped, results, n, threshold, config)
    if timestamp is not None:
        report.timestamp = timestamp
    return report


PLOT_COLUMNS = (
    "experiment_id", "metric", "baseline", "variant",
    "overall_lift", "overall_lift_ci_low", "overall_lift_ci_high",
    "unsquared_der_delta", "unsquared_der_delta_ci_low", "unsquared_der_delta_ci_high",
    "lift_gap", "lift_gap_ci_low", "lift_gap_ci_high",
)


def plot_rows(datasets: Sequence[ExperimentDataset], config: AlertConfig, level: float = 0.95) -> list[dict]:
    """Per-comparison overall lift, unsquared DER change and lift gap with CIs.

    The lift gap is the first universe group's lift minus the second's.
    Comparisons that cannot be computed are left out.
    """
    plan = enumerate_comparisons(datasets, config)
    by_id = {d.experiment_id: d for d in datasets}
    z = normal_quantile(level)
    rows = []
    for index, comp in enumerate(plan.attempted):
        ds = by_id[comp.experiment_id]
        base, other = comp.variant_pair
        try:
            rep = representation_report(ds.sample(base, comp.metric), ds.sample(other, comp.metric),
                                        config.group_universe, comp.metric, level, config.resampling_plan(index))
        except DerstatsError:
            continue
        un = rep.unsquared_der_delta
        half = z * math.sqrt(rep.der_delta.unsquared_variance())
        gap = rep.lift_gap
        rows.append({
            "experiment_id": comp.experiment_id, "metric": comp.metric, "baseline": base, "variant": other,
            "overall_lift": rep.overall_lift.lift, "overall_lift_ci_low": rep.overall_lift.ci_low,
            "overall_lift_ci_high": rep.overall_lift.ci_high,
            "unsquared_der_delta": un, "unsquared_der_delta_ci_low": un - half, "unsquared_der_delta_ci_high": un + half,
            "lift_gap": gap.estimate if gap else math.nan,
            "lift_gap_ci_low": gap.ci_low if gap else math.nan,
            "lift_gap_ci_high": gap.ci_high if gap else math.nan,
        })
    return rows


def write_plot_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=PLOT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
