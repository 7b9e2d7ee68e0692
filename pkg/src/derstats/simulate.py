"""Synthetic A/B experiments with zero-inflated log-normal metrics.

Per metric the generator draws

    n ~ U(a1, a2)            meanlog ~ N(b_mean, b_sd)
    group effect ~ U(c1, c2) treatment effect ~ N(d_mean, d_sd)
    interaction ~ N(e_mean, e_sd) * Bernoulli(eps)
    mixture prob ~ U(f1, f2) sdlog ~ U(g1, g2)

and each unit's response is ``round(LogNormal(loc, sdlog))`` with the mixture
probability, else 0, where effects enter the log scale as ``log(1 + effect)``
so they read as relative lifts::

    loc = meanlog + log(1 + group_effect) * G + log(1 + treatment) * W
          + log(1 + interaction) * G * W

Variant ``W`` and group ``G`` are fair coin flips per unit. Without an
interaction the two groups keep the same shares in both variants, so the true
DER change is exactly zero; a difference-in-differences on absolute means is
not, because multiplicative effects on the two groups differ in absolute size.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .core_stats import (
    DerEstimate,
    GroupSummary,
    combine,
    der_statistic,
    der_variance_k2,
    normal_two_sided_p,
)
from .errors import DerstatsError, InvalidEffect, MissingCell, UndefinedVariance
from .kernels import cell_moments

log = logging.getLogger(__name__)

GROUPS = (0, 1)
VARIANTS = ("control", "treatment")

TABLE1_ROWS = {
    "pct_rejections": "% Rejections",
    "false_discovery_rate_on_interactions": "False discoveries on group/treatment interactions",
    "power_on_interactions": "Power against group/treatment interactions",
    "power_on_interactions_ge_1pct": "Power against group/treatment interactions ≥ 1%",
    "power_on_top_dstar_quantile": "Power against top 2.5% of |D*|",
}

TOP_DSTAR_QUANTILE = 0.975
INTERACTION_STRATUM = 0.01


def _pair(value, name):
    try:
        lo, hi = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a pair of numbers, got {value!r}") from None
    return lo, hi


@dataclass(frozen=True)
class SimConfig:
    """Hyper-ranges of the generator.

    ``*_range`` fields drawn uniformly are ``(low, high)``; the normal draws
    (``meanlog_range``, ``treatment_effect_range``, ``interaction_range``) are
    ``(mean, sd)``.
    """

    n_range: tuple = (100_000, 1_000_000)
    meanlog_range: tuple = (2.0, 0.5)
    group_effect_range: tuple = (-0.5, 0.5)
    treatment_effect_range: tuple = (0.0, 0.1)
    interaction_range: tuple = (0.0, 0.12)
    interaction_prob: float = 0.05
    mixture_range: tuple = (0.2, 0.8)
    sdlog_range: tuple = (0.5, 1.0)
    experiments: int = 1000
    metrics_per_experiment: int = 1
    alpha: float = 0.05

    def __post_init__(self):
        for name in ("n_range", "group_effect_range", "mixture_range", "sdlog_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be ordered (low <= high), got {(lo, hi)}")
        for name in ("meanlog_range", "treatment_effect_range", "interaction_range"):
            if getattr(self, name)[1] < 0:
                raise ValueError(f"{name} standard deviation must be >= 0")
        if self.n_range[0] < 4:
            raise ValueError("n_range must allow at least 4 units")
        lo, hi = self.mixture_range
        if not (0 < lo and hi <= 1):
            raise ValueError("mixture_range must lie in (0, 1]")
        if self.sdlog_range[0] <= 0:
            raise ValueError("sdlog_range must be positive")
        if not 0 <= self.interaction_prob <= 1:
            raise ValueError("interaction_prob must lie in [0, 1]")
        if self.group_effect_range[0] <= -1:
            raise ValueError("group effects must exceed -1")
        if self.experiments < 1 or self.metrics_per_experiment < 1:
            raise ValueError("need at least one experiment and one metric")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @classmethod
    def from_mapping(cls, data: dict) -> "SimConfig":
        data = dict(data.get("simulation", data))
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            raise ValueError(f"unknown simulation settings: {sorted(unknown)}")
        for name, value in list(data.items()):
            if name.endswith("_range"):
                data[name] = _pair(value, name)
        return cls(**data)

    @classmethod
    def from_toml(cls, path) -> "SimConfig":
        import tomli

        with open(path, "rb") as fh:
            return cls.from_mapping(tomli.load(fh))

    @classmethod
    def default(cls) -> "SimConfig":
        import tomli

        text = resources.files("derstats").joinpath("data/default_sim.toml").read_text()
        return cls.from_mapping(tomli.loads(text))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class SimParams:
    n: int
    meanlog: float
    group_effect: float
    treatment_effect: float
    interaction: float
    mixture_prob: float
    sdlog: float

    def validate(self):
        for name in ("group_effect", "treatment_effect", "interaction"):
            if getattr(self, name) <= -1:
                raise InvalidEffect(f"{name} = {getattr(self, name)} <= -1 has no log-scale form")
        if self.n < 4 or not 0 <= self.mixture_prob <= 1 or self.sdlog <= 0:
            raise ValueError(f"invalid simulation parameters {self}")

    def cell_locations(self) -> np.ndarray:
        """Log-scale location per (group, variant) cell, indexed [group, variant]."""
        self.validate()
        a, b, d = (math.log1p(v) for v in (self.group_effect, self.treatment_effect, self.interaction))
        return np.array([[self.meanlog, self.meanlog + b], [self.meanlog + a, self.meanlog + a + b + d]])


@dataclass(frozen=True)
class SimTruth:
    expected_cell_means: dict  # (group, variant) -> mean
    d_control: float
    d_treatment: float
    delta_star: float
    interaction_relative: float

    @property
    def abs_d_star(self) -> float:
        return abs(self.delta_star)


@dataclass
class SimExperiment:
    params: list
    variant: np.ndarray  # 0 control, 1 treatment
    group: np.ndarray  # 0 or 1
    metrics: np.ndarray  # (m, n) nonnegative integers stored as float64

    @property
    def n(self) -> int:
        return self.variant.size


@dataclass(frozen=True)
class PowerReport:
    method: str
    pct_rejections: float
    false_discovery_rate_on_interactions: float
    power_on_interactions: float
    power_on_interactions_ge_1pct: float
    power_on_top_dstar_quantile: float
    dstar_quantile_threshold: float
    n_comparisons: int = 0
    n_rejections: int = 0
    n_false_discoveries: int = 0
    n_skipped: int = 0

    def table_rows(self) -> dict:
        return {label: getattr(self, key) for key, label in TABLE1_ROWS.items()}

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["table1"] = self.table_rows()
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in out.items()}


def experiment_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def draw_sim_params(config: SimConfig, rng: np.random.Generator) -> SimParams:
    a1, a2 = config.n_range
    n = int(round(rng.uniform(a1, a2)))
    meanlog = rng.normal(*config.meanlog_range)
    group_effect = rng.uniform(*config.group_effect_range)
    treatment = rng.normal(*config.treatment_effect_range)
    interaction = rng.normal(*config.interaction_range) * (rng.random() < config.interaction_prob)
    mixture = rng.uniform(*config.mixture_range)
    sdlog = rng.uniform(*config.sdlog_range)
    return SimParams(n, float(meanlog), float(group_effect), float(treatment), float(interaction),
                     float(mixture), float(sdlog))


def draw_experiment_params(config: SimConfig, rng: np.random.Generator) -> list[SimParams]:
    """One parameter draw per metric; all metrics share the first draw's unit count."""
    params = [draw_sim_params(config, rng) for _ in range(config.metrics_per_experiment)]
    return [dataclasses.replace(p, n=params[0].n) for p in params]


def generate_experiment(params: SimParams | Sequence[SimParams], rng: np.random.Generator) -> SimExperiment:
    plist = [params] if isinstance(params, SimParams) else list(params)
    n = plist[0].n
    if any(p.n != n for p in plist):
        raise ValueError("all metrics of an experiment must share n")
    locs = [p.cell_locations() for p in plist]
    variant = rng.integers(0, 2, n, dtype=np.int8)
    group = rng.integers(0, 2, n, dtype=np.int8)
    metrics = np.zeros((len(plist), n))
    for j, (p, loc) in enumerate(zip(plist, locs)):
        idx = np.flatnonzero(rng.random(n) < p.mixture_prob)
        mu = loc[group[idx], variant[idx]]
        metrics[j, idx] = np.rint(np.exp(mu + p.sdlog * rng.standard_normal(idx.size)))
    return SimExperiment(plist, variant, group, metrics)


def _cell_means(params: SimParams, rounded: bool) -> np.ndarray:
    loc = params.cell_locations()
    if not rounded:
        return params.mixture_prob * np.exp(loc + params.sdlog**2 / 2)
    return params.mixture_prob * np.vectorize(lambda m: rounded_lognormal_mean(m, params.sdlog))(loc)


def rounded_lognormal_mean(meanlog: float, sdlog: float, cutoff: int = 1000) -> float:
    """E[round(X)] for X ~ LogNormal(meanlog, sdlog).

    Sums the survival function at half-integers up to ``cutoff`` and closes
    the tail with E[(X - cutoff)^+], the midpoint-rule limit of the rest.
    """
    k = np.arange(1, cutoff + 1) - 0.5
    head = float(np.sum(ndtr(-(np.log(k) - meanlog) / sdlog)))
    d1 = (meanlog + sdlog**2 - math.log(cutoff)) / sdlog
    tail = math.exp(meanlog + sdlog**2 / 2) * ndtr(d1) - cutoff * ndtr(d1 - sdlog)
    return head + tail


def expected_group_means(params: SimParams, rounded: bool = False) -> SimTruth:
    """Parameter-level truth. ``rounded=True`` accounts for integer rounding
    exactly; the default analytic moment ignores it."""
    means = _cell_means(params, rounded)
    d_c = der_statistic(means[:, 0])
    d_t = der_statistic(means[:, 1])
    control_avg = means[:, 0].mean()
    interaction_shift = means[1, 1] * params.interaction / (1.0 + params.interaction)
    cells = {(g, VARIANTS[w]): float(means[g, w]) for g in GROUPS for w in (0, 1)}
    return SimTruth(cells, d_c, d_t, d_t - d_c, abs(interaction_shift) / control_avg)


def _summaries_from_moments(counts, means, m2, variant) -> list[GroupSummary]:
    idx = [2 * variant + g for g in GROUPS]
    total = int(sum(counts[i] for i in idx))
    out = []
    for g, i in zip(GROUPS, idx):
        n = int(counts[i])
        if n == 0:
            raise MissingCell(f"group {g} has no units in {VARIANTS[variant]}")
        var = m2[i] / (n - 1) if n >= 2 else math.nan
        out.append(GroupSummary(g, n, float(means[i]), float(var), n / total))
    return out


def cell_summaries(exp: SimExperiment, metric: int = 0):
    """(counts, means, m2) for the four cells, indexed ``2 * variant + group``."""
    codes = 2 * exp.variant.astype(np.int64) + exp.group
    return cell_moments(codes, exp.metrics[metric], 4)


def der_from_moments(counts, means, m2):
    summaries = [_summaries_from_moments(counts, means, m2, v) for v in (0, 1)]
    c, t = (DerEstimate(2, tuple(g.mean for g in s), der_statistic([g.mean for g in s]), der_variance_k2(s))
            for s in summaries)
    return combine(c, t)


def did_from_moments(counts, means, m2, group_universe=(1, 0)):
    """(estimate, variance, z, p) of the group difference in absolute lifts."""
    if np.any(counts < 2):
        if np.any(counts == 0):
            raise MissingCell("a (group, variant) cell is empty")
        raise UndefinedVariance("a (group, variant) cell has fewer than 2 units")
    g1, g2 = group_universe
    lift = {g: means[2 + g] - means[g] for g in GROUPS}
    estimate = float(lift[g1] - lift[g2])
    variance = float(np.sum(m2 / (counts - 1) / counts))
    if variance <= 0:
        return estimate, variance, math.nan, math.nan
    z = estimate / math.sqrt(variance)
    return estimate, variance, z, normal_two_sided_p(z)


def did_statistic(variant, group, values, group_universe=(1, 0)):
    """Difference in differences of cell means between the first and second group.

    ``variant`` is 0/1 (control/treatment); ``group`` labels must come from
    ``group_universe``.
    """
    variant = np.asarray(variant, dtype=np.int64)
    group = np.asarray(group)
    g1, g2 = group_universe
    gcode = np.where(group == g1, 1, np.where(group == g2, 0, -1))
    if np.any(gcode < 0):
        raise ValueError("group label outside the universe")
    counts, means, m2 = cell_moments(2 * variant + gcode, values, 4)
    return did_from_moments(counts, means, m2, (1, 0))


@dataclass
class ComparisonRecord:
    experiment: int
    metric: int
    interaction: float
    abs_d_star: float
    interaction_relative: float
    der_p: float
    did_p: float


def simulate_records(config: SimConfig, seed: int) -> list[ComparisonRecord]:
    records = []
    for i in range(config.experiments):
        rng = experiment_rng(seed, i)
        params = draw_experiment_params(config, rng)
        exp = generate_experiment(params, rng)
        codes = 2 * exp.variant.astype(np.int64) + exp.group
        for j, p in enumerate(params):
            truth = expected_group_means(p)
            moments = cell_moments(codes, exp.metrics[j], 4)
            try:
                der_p = der_from_moments(*moments).p_value
            except DerstatsError as exc:
                log.info("experiment %d metric %d: DER skipped (%s)", i, j, exc)
                der_p = math.nan
            try:
                did_p = did_from_moments(*moments)[3]
            except DerstatsError as exc:
                log.info("experiment %d metric %d: DID skipped (%s)", i, j, exc)
                did_p = math.nan
            records.append(ComparisonRecord(i, j, p.interaction, truth.abs_d_star,
                                            truth.interaction_relative, der_p, did_p))
    return records


def _rate(hits: np.ndarray, mask: np.ndarray) -> float:
    return float(hits[mask].mean()) if mask.any() else math.nan


def score_records(records: Sequence[ComparisonRecord], alpha: float) -> tuple[PowerReport, PowerReport]:
    interaction = np.array([r.interaction != 0 for r in records])
    rel = np.array([r.interaction_relative for r in records])
    dstar = np.array([r.abs_d_star for r in records])
    threshold = float(np.quantile(dstar, TOP_DSTAR_QUANTILE)) if len(records) else math.nan
    top = (dstar >= threshold) & (dstar > 0)
    reports = []
    for method, attr in (("der", "der_p"), ("did", "did_p")):
        p = np.array([getattr(r, attr) for r in records])
        tested = ~np.isnan(p)
        n_tested = int(tested.sum())
        cutoff = alpha / n_tested if n_tested else 0.0
        reject = tested & (p <= cutoff)
        n_rej = int(reject.sum())
        false = int((reject & ~interaction).sum())
        reports.append(PowerReport(
            method=method,
            pct_rejections=n_rej / n_tested if n_tested else math.nan,
            false_discovery_rate_on_interactions=false / n_rej if n_rej else 0.0,
            power_on_interactions=_rate(reject, tested & interaction),
            power_on_interactions_ge_1pct=_rate(reject, tested & interaction & (rel >= INTERACTION_STRATUM)),
            power_on_top_dstar_quantile=_rate(reject, tested & top),
            dstar_quantile_threshold=threshold,
            n_comparisons=n_tested,
            n_rejections=n_rej,
            n_false_discoveries=false,
            n_skipped=len(records) - n_tested,
        ))
    return reports[0], reports[1]


def run_power_study(config: SimConfig, seed: int) -> tuple[PowerReport, PowerReport]:
    """One simulated week: DER and DID alerting, each Bonferroni-corrected."""
    return score_records(simulate_records(config, seed), config.alpha)


def summarize_runs(reports: Sequence[PowerReport]) -> dict:
    """Average each rate over runs (ignoring undefined strata)."""
    keys = [
        "pct_rejections",
        "false_discovery_rate_on_interactions",
        "power_on_interactions",
        "power_on_interactions_ge_1pct",
        "power_on_top_dstar_quantile",
        "dstar_quantile_threshold",
    ]
    out = {"method": reports[0].method, "runs": len(reports)}
    for key in keys:
        vals = np.array([getattr(r, key) for r in reports], dtype=float)
        out[key] = float(np.nanmean(vals)) if np.any(~np.isnan(vals)) else None
    out["runs_without_false_discoveries"] = sum(r.n_false_discoveries == 0 for r in reports)
    out["table1"] = {label: out[key] for key, label in TABLE1_ROWS.items()}
    return out
