"""Experiment tables: reading, writing and per-comparison validation.

Tables are in long format, one row per unit, with the reserved columns
``experiment_id``, ``unit_id``, ``variant`` and ``group``. Every other
column is either a metric (numeric, nonnegative) or a feature. Metrics are
the columns declared in the config; without a declaration every numeric
column not declared as a feature is a metric.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, SchemaError, ValidationError

RESERVED = ("experiment_id", "unit_id", "variant", "group")
PAIR_MODES = ("all", "control-vs-each")


@dataclass(frozen=True)
class IngestConfig:
    metrics: tuple | None = None
    features: dict = field(default_factory=dict)  # name -> "numeric" | "categorical"
    group_universe: tuple | None = None

    @classmethod
    def from_mapping(cls, data: dict) -> "IngestConfig":
        data = data.get("data", {})
        metrics = data.get("metrics")
        universe = data.get("group_universe")
        return cls(tuple(metrics) if metrics is not None else None, dict(data.get("features", {})),
                   tuple(str(g) for g in universe) if universe is not None else None)


@dataclass(frozen=True)
class ExperimentDataset:
    """Units of one experiment, stored column-wise in file order."""

    experiment_id: str
    unit_id: tuple
    variant: np.ndarray
    group: np.ndarray
    features: dict
    metrics: dict

    @property
    def n(self) -> int:
        return len(self.unit_id)

    def variants(self) -> list[str]:
        return sorted(set(self.variant.tolist()))

    def groups(self) -> list[str]:
        return sorted(set(self.group.tolist()))

    def sample(self, variant: str, metric: str):
        """``(groups, values)`` of one variant for one metric."""
        mask = self.variant == variant
        return self.group[mask], self.metrics[metric][mask]

    def rows(self):
        for i in range(self.n):
            row = {"experiment_id": self.experiment_id, "unit_id": self.unit_id[i],
                   "variant": self.variant[i], "group": self.group[i]}
            row.update({k: v[i] for k, v in self.features.items()})
            row.update({k: float(v[i]) for k, v in self.metrics.items()})
            yield row


def _missing(v) -> bool:
    return v is None or v == "" or (isinstance(v, float) and math.isnan(v))


def _as_number(v):
    if isinstance(v, bool):
        return None
    if isinstance(v, (int, float)):
        return float(v)
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return None
    return None


def _read_records(path: Path, fmt: str):
    """Yield ``(line_number, record)`` and return the column list first."""
    text = path.read_text(encoding="utf-8")
    if fmt == "csv":
        reader = csv.reader(io.StringIO(text), strict=True)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: no header row") from None
        except csv.Error as exc:
            raise ParseError(str(exc), 1) from None
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicate column names in header")
        records = []
        try:
            for row in reader:
                line = reader.line_num
                if not row:
                    continue
                if len(row) != len(header):
                    raise ParseError(f"expected {len(header)} fields, found {len(row)}", line)
                records.append((line, dict(zip(header, row))))
        except csv.Error as exc:
            raise ParseError(str(exc), reader.line_num) from None
        return header, records
    header, records = None, []
    for line, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", line) from None
        if not isinstance(obj, dict):
            raise ParseError("each line must hold a JSON object", line)
        if header is None:
            header = list(obj)
        elif set(obj) != set(header):
            raise ParseError(f"keys differ from the first row: {sorted(set(obj) ^ set(header))}", line)
        records.append((line, obj))
    return header or [], records


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".json", ".ndjson") else "csv"
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"format must be 'csv' or 'jsonl', got {fmt!r}")
    return fmt


def read_experiment_table(path, format: str | None = None, config: IngestConfig | None = None
                          ) -> list[ExperimentDataset]:
    """Parse a CSV or JSONL table into one dataset per experiment_id, in order
    of first appearance. A table without data rows yields an empty list."""
    path = Path(path)
    config = config or IngestConfig()
    header, records = _read_records(path, _detect_format(path, format))
    if not header and not records:
        raise SchemaError(f"{path}: empty file, reserved columns {list(RESERVED)} missing")
    absent = [c for c in RESERVED if c not in header]
    if absent:
        raise SchemaError(f"{path}: missing reserved columns {absent}")
    extra = [c for c in header if c not in RESERVED]
    if config.metrics is not None:
        undeclared = [m for m in config.metrics if m not in extra]
        if undeclared:
            raise SchemaError(f"{path}: declared metric columns not found: {undeclared}")
        metric_cols = [c for c in extra if c in config.metrics]
    else:
        metric_cols = [c for c in extra if c not in config.features
                       and all(_as_number(r[c]) is not None for _, r in records)
                       and records]
    feature_cols = [c for c in extra if c not in metric_cols]

    by_exp: dict[str, dict] = {}
    for line, rec in records:
        exp = str(rec["experiment_id"])
        for col in RESERVED:
            if _missing(rec[col]):
                raise ValidationError(f"empty {col}", line)
        store = by_exp.setdefault(exp, {"unit": [], "seen": {}, "variant": [], "group": [],
                                        "features": {c: [] for c in feature_cols},
                                        "metrics": {c: [] for c in metric_cols}})
        unit = str(rec["unit_id"])
        if unit in store["seen"]:
            raise ValidationError(
                f"duplicate unit_id {unit!r} in experiment {exp!r} (first on line {store['seen'][unit]})", line)
        store["seen"][unit] = line
        store["unit"].append(unit)
        store["variant"].append(str(rec["variant"]))
        store["group"].append(str(rec["group"]))
        for c in metric_cols:
            raw = rec[c]
            if _missing(raw):
                raise ValidationError(f"missing value for metric {c!r}", line)
            value = _as_number(raw)
            if value is None:
                raise ParseError(f"metric {c!r} is not numeric: {raw!r}", line)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"metric {c!r} must be finite and nonnegative, got {raw!r}", line)
            store["metrics"][c].append(value)
        for c in feature_cols:
            raw = rec[c]
            store["features"][c].append(None if _missing(raw) else raw)

    out = []
    for exp, s in by_exp.items():
        out.append(ExperimentDataset(
            exp, tuple(s["unit"]), np.array(s["variant"], dtype=object), np.array(s["group"], dtype=object),
            {c: tuple(v) for c, v in s["features"].items()},
            {c: np.array(v, dtype=np.float64) for c, v in s["metrics"].items()},
        ))
    return out


def read_experiment_dir(path, config: IngestConfig | None = None) -> list[ExperimentDataset]:
    """Every ``*.csv`` and ``*.jsonl`` file of a directory (or a single file)."""
    path = Path(path)
    if path.is_file():
        files = [path]
    else:
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in (".csv", ".jsonl"))
        if not files:
            raise SchemaError(f"{path}: no .csv or .jsonl files")
    datasets = []
    for f in files:
        try:
            datasets.extend(read_experiment_table(f, config=config))
        except (ParseError, ValidationError) as exc:
            raise type(exc)(f"{f.name}: {exc}") from None
    ids = [d.experiment_id for d in datasets]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ValidationError(f"experiment ids split across files: {dupes}")
    return datasets


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_experiment_table(datasets: Iterable[ExperimentDataset]) -> str:
    """Canonical CSV: reserved columns, then the other columns sorted by name;
    floats in shortest round-trip form; LF line endings."""
    datasets = list(datasets)
    extra = sorted({c for d in datasets for c in itertools.chain(d.features, d.metrics)})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*RESERVED, *extra])
    for d in datasets:
        for row in d.rows():
            w.writerow([_fmt(row.get(c)) for c in (*RESERVED, *extra)])
    return buf.getvalue()


def write_experiment_table(datasets: Iterable[ExperimentDataset], path) -> None:
    Path(path).write_text(format_experiment_table(datasets), encoding="utf-8")


def dataset_from_arrays(experiment_id: str, variant, group, metrics: dict, features: dict | None = None,
                        unit_id: Sequence | None = None) -> ExperimentDataset:
    """Build a dataset in memory (labels are stored as strings)."""
    variant = np.array([str(v) for v in variant], dtype=object)
    n = variant.size
    unit_id = tuple(str(u) for u in (unit_id if unit_id is not None else range(n)))
    if len(set(unit_id)) != n:
        raise ValidationError(f"duplicate unit_id in experiment {experiment_id!r}")
    mets = {k: np.asarray(v, dtype=np.float64) for k, v in metrics.items()}
    for k, v in mets.items():
        if v.shape != (n,):
            raise ValidationError(f"metric {k!r} has {v.size} values, expected {n}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValidationError(f"metric {k!r} must be finite and nonnegative")
    return ExperimentDataset(str(experiment_id), unit_id, variant, np.array([str(g) for g in group], dtype=object),
                             {k: tuple(v) for k, v in (features or {}).items()}, mets)


def variant_pairs(dataset: ExperimentDataset, mode="control-vs-each", control: str = "control") -> list[tuple]:
    """Ordered ``(baseline, other)`` variant pairs of one experiment.

    ``mode`` is ``"all"`` (every unordered pair, lexicographic), ``"control-vs-each"``
    or an explicit list of pairs.
    """
    variants = dataset.variants()
    if isinstance(mode, str):
        if mode == "all":
            return list(itertools.combinations(variants, 2))
        if mode == "control-vs-each":
            return [(control, v) for v in variants if v != control]
        raise ValueError(f"variant_pairs must be one of {PAIR_MODES} or a list of pairs, got {mode!r}")
    return [tuple(str(v) for v in p) for p in mode]


@dataclass(frozen=True)
class Issue:
    experiment_id: str
    metric: str
    variant_pair: tuple
    code: str
    message: str

    @property
    def key(self):
        return (self.experiment_id, self.metric, self.variant_pair)


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.issues

    @property
    def skipped(self) -> frozenset:
        return frozenset(i.key for i in self.issues)

    def reasons(self, key) -> list[str]:
        return [f"{i.code}: {i.message}" for i in self.issues if i.key == key]


def comparison_issues(dataset: ExperimentDataset, metric: str, pair: tuple, group_universe) -> list[Issue]:
    def issue(code, msg):
        return Issue(dataset.experiment_id, metric, pair, code, msg)

    if metric not in dataset.metrics:
        return [issue("MissingMetric", f"metric {metric!r} not in experiment")]
    present = set(dataset.variant.tolist())
    out = [issue("MissingVariant", f"variant {v!r} has no units") for v in pair if v not in present]
    if out:
        return out
    universe = [str(g) for g in group_universe]
    values = dataset.metrics[metric]
    for v in pair:
        mask = dataset.variant == v
        groups = dataset.group[mask]
        stray = sorted(set(groups.tolist()) - set(universe))
        if stray:
            out.append(issue("UnknownGroup", f"variant {v!r} has groups outside the universe: {stray}"))
        for g in universe:
            n = int(np.sum(groups == g))
            if n == 0:
                out.append(issue("MissingGroup", f"group {g!r} absent from variant {v!r}"))
            elif n < 2:
                out.append(issue("UndefinedVariance", f"group {g!r} has n = 1 in variant {v!r}"))
        vals = values[mask]
        if np.any(~np.isfinite(vals)) or np.any(vals < 0):
            out.append(issue("ValidationError", f"metric {metric!r} has negative or non-finite values in {v!r}"))
    return out


def validate_dataset(dataset: ExperimentDataset, plan) -> ValidationReport:
    """Per-comparison checks for ``plan`` (anything with ``metrics``,
    ``group_universe``, ``variant_pairs`` and ``control``)."""
    issues = []
    for metric in plan.metrics:
        for pair in variant_pairs(dataset, plan.variant_pairs, plan.control):
            issues.extend(comparison_issues(dataset, metric, pair, plan.group_universe))
    return ValidationReport(tuple(issues))
