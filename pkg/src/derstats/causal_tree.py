"""Honest causal tree on relative lift.

The training half of the data chooses the splits: greedy recursion on the
squared t-statistic of the difference in relative lift between the two
children. Pruning walks a nested family of partitions, collapsing the split
with the weakest training evidence first, and keeps the largest partition
whose leaves have pairwise-disjoint confidence intervals on the estimation
half. Leaf effects and intervals are always reported from the estimation
half.

Numeric features split as ``x <= threshold`` and categorical ones as
``x == category`` (one versus the rest). Units with a missing value follow
the child that received more training units; the choice is stored on the
split so new data routes the same way.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .core_stats import RelativeLift, relative_lift
from .errors import DerstatsError, InfeasibleSplit, ValidationError
from .kernels import split_scan

KINDS = ("numeric", "categorical")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    kind: str = "numeric"
    categories: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"feature {self.name!r}: kind must be one of {KINDS}")
        if self.categories is not None:
            if self.kind != "categorical":
                raise ValueError(f"feature {self.name!r}: only categorical features take categories")
            object.__setattr__(self, "categories", tuple(self.categories))


def load_features(path) -> list[FeatureSpec]:
    """``[[feature]]`` tables with ``name``, ``kind`` and optional ``categories``."""
    import tomli

    with open(path, "rb") as fh:
        data = tomli.load(fh)
    items = data.get("feature", [])
    if not items:
        raise ValueError(f"{path}: no [[feature]] tables")
    return [FeatureSpec(f["name"], f.get("kind", "numeric"), f.get("categories")) for f in items]


@dataclass(frozen=True)
class TreeConfig:
    min_leaf_per_variant: int = 500
    max_depth: int = 4
    honest_fraction: float = 0.5
    ci_level: float = 0.95
    seed: int = 0
    max_candidates: int = 64
    workers: int = 1

    def __post_init__(self):
        if self.min_leaf_per_variant < 2:
            raise ValueError("min_leaf_per_variant must be at least 2")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if not 0 < self.honest_fraction < 1:
            raise ValueError("honest_fraction must lie in (0, 1)")
        if not 0 < self.ci_level < 1:
            raise ValueError("ci_level must lie in (0, 1)")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be positive")

    @classmethod
    def from_toml(cls, path) -> "TreeConfig":
        import tomli

        with open(path, "rb") as fh:
            data = tomli.load(fh)
        return cls(**data.get("tree", data))


def _is_missing(v) -> bool:
    return v is None or v == "" or (isinstance(v, float) and math.isnan(v))


class TreeData:
    """Encoded feature columns plus treatment indicator and response.

    Numeric columns are float64 with nan for missing values; categorical
    columns are integer codes into ``labels[name]`` with -1 for missing.
    """

    def __init__(self, columns: Mapping[str, Sequence], treatment, response, features: Sequence[FeatureSpec]):
        self.features = list(features)
        self.w = np.asarray(treatment, dtype=np.uint8)
        self.y = np.asarray(response, dtype=np.float64)
        n = self.y.size
        if self.w.shape != (n,):
            raise ValidationError("treatment and response differ in length")
        if not np.isin(self.w, (0, 1)).all():
            raise ValidationError("treatment must be 0 (control) or 1 (treatment)")
        if not np.isfinite(self.y).all():
            raise ValidationError("response has non-finite values")
        self.columns, self.labels = {}, {}
        for spec in self.features:
            if spec.name not in columns:
                raise ValidationError(f"feature column {spec.name!r} not found")
            raw = list(columns[spec.name]) if not isinstance(columns[spec.name], np.ndarray) else columns[spec.name]
            if len(raw) != n:
                raise ValidationError(f"feature column {spec.name!r} has {len(raw)} values, expected {n}")
            if spec.kind == "numeric":
                try:
                    col = np.array([math.nan if _is_missing(v) else float(v) for v in raw], dtype=np.float64)
                except (TypeError, ValueError) as exc:
                    raise ValidationError(f"feature {spec.name!r} is not numeric: {exc}") from None
                self.columns[spec.name] = col
            else:
                present = sorted({v for v in raw if not _is_missing(v)}, key=str)
                labels = list(spec.categories) if spec.categories is not None else present
                unknown = set(present) - set(labels)
                if unknown:
                    raise ValidationError(f"feature {spec.name!r} has undeclared categories {sorted(map(str, unknown))}")
                if len(present) < 2:
                    raise ValidationError(f"categorical feature {spec.name!r} needs at least 2 categories in the data")
                index = {v: i for i, v in enumerate(labels)}
                self.columns[spec.name] = np.array([-1 if _is_missing(v) else index[v] for v in raw], dtype=np.int64)
                self.labels[spec.name] = labels
        self.n = n

    def spec(self, name: str) -> FeatureSpec:
        return next(f for f in self.features if f.name == name)


@dataclass(frozen=True)
class Split:
    feature: str
    kind: str
    threshold: float | None
    category: object
    missing_left: bool
    score: float
    n_missing: int = 0

    def goes_left(self, data: TreeData, idx: np.ndarray) -> np.ndarray:
        col = data.columns[self.feature][idx]
        if self.kind == "numeric":
            missing = np.isnan(col)
            left = col <= self.threshold
        else:
            missing = col < 0
            left = col == data.labels[self.feature].index(self.category)
        return np.where(missing, self.missing_left, left)

    def describe(self, left: bool) -> str:
        if self.kind == "numeric":
            text = f"{self.feature} {'<=' if left else '>'} {self.threshold:g}"
        else:
            text = f"{self.feature} {'==' if left else '!='} {self.category}"
        return text + (" or missing" if self.n_missing and left == self.missing_left else "")


@dataclass(frozen=True)
class TreeNode:
    node_id: int
    depth: int
    path: tuple = ()
    n_train: tuple = (0, 0)
    train_lift: RelativeLift | None = None
    split: Split | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    lift: RelativeLift | None = None
    n_estimation: tuple = (0, 0)

    @property
    def is_leaf(self) -> bool:
        return self.split is None

    def leaves(self) -> list["TreeNode"]:
        return [self] if self.is_leaf else self.left.leaves() + self.right.leaves()

    def internal_nodes(self) -> list["TreeNode"]:
        if self.is_leaf:
            return []
        return [self] + self.left.internal_nodes() + self.right.internal_nodes()

    def structure(self):
        """Hashable description of the splits, for comparing trees."""
        if self.is_leaf:
            return None
        s = self.split
        return (s.feature, s.threshold, s.category, s.missing_left, self.left.structure(), self.right.structure())

    def apply(self, data: TreeData, idx=None) -> np.ndarray:
        """Leaf ``node_id`` for every unit (or for ``idx``)."""
        idx = np.arange(data.n) if idx is None else np.asarray(idx)
        out = np.empty(idx.size, dtype=np.int64)
        self._apply(data, idx, np.arange(idx.size), out)
        return out

    def _apply(self, data, idx, pos, out):
        if self.is_leaf:
            out[pos] = self.node_id
            return
        go = self.split.goes_left(data, idx)
        self.left._apply(data, idx[go], pos[go], out)
        self.right._apply(data, idx[~go], pos[~go], out)

    def to_dict(self) -> dict:
        out = {"node_id": self.node_id, "depth": self.depth, "path": list(self.path),
               "n_train": list(self.n_train), "n_estimation": list(self.n_estimation),
               "lift": _lift_dict(self.lift), "train_lift": _lift_dict(self.train_lift)}
        if not self.is_leaf:
            s = self.split
            out["split"] = {"feature": s.feature, "kind": s.kind, "threshold": s.threshold,
                            "category": s.category, "missing_left": s.missing_left, "t2": s.score,
                            "n_missing": s.n_missing}
            out["left"], out["right"] = self.left.to_dict(), self.right.to_dict()
        return out


def _lift_dict(lift: RelativeLift | None):
    if lift is None:
        return None
    keys = ("lift", "ci_low", "ci_high", "variance", "mean_control", "mean_treatment", "level")
    return {k: float(getattr(lift, k)) for k in keys}


def _cell(n, s, ss):
    mean = s / n
    var = max(ss - s * mean, 0.0) / (n - 1) if n >= 2 else math.nan
    return n, mean, var


def _sums(data: TreeData, idx) -> np.ndarray:
    """(n0, s0, ss0, n1, s1, ss1) over ``idx``."""
    w, y = data.w[idx], data.y[idx]
    out = np.empty(6)
    for v in (0, 1):
        yv = y[w == v]
        out[3 * v:3 * v + 3] = (yv.size, yv.sum(), (yv * yv).sum())
    return out


def _lift_from_sums(sums, level=0.95, min_leaf=2) -> RelativeLift:
    n0, n1 = int(sums[0]), int(sums[3])
    if n0 < max(min_leaf, 2) or n1 < max(min_leaf, 2):
        raise InfeasibleSplit(f"cohort has {n0} control and {n1} treatment units, need {max(min_leaf, 2)}")
    return relative_lift(_cell(*sums[:3]), _cell(*sums[3:]), level)


def _as_lift(side, min_leaf):
    if isinstance(side, RelativeLift):
        if min(side.n_control, side.n_treatment) < max(min_leaf, 2):
            raise InfeasibleSplit(f"child has {side.n_control}/{side.n_treatment} units, need {max(min_leaf, 2)}")
        return side
    control, treatment = side
    if min(control[0], treatment[0]) < max(min_leaf, 2):
        raise InfeasibleSplit(f"child has {control[0]}/{treatment[0]} units, need {max(min_leaf, 2)}")
    return relative_lift(control, treatment)


def split_score(left, right, min_leaf: int = 2) -> float:
    """Squared t-statistic for the difference in relative lift of two children.

    Each side is a ``RelativeLift`` or a pair of ``(n, mean, variance)``
    cells (control, treatment).
    """
    a, b = _as_lift(left, min_leaf), _as_lift(right, min_leaf)
    denom = a.variance + b.variance
    if not denom > 0:
        raise InfeasibleSplit("both children have zero lift variance")
    return (a.lift - b.lift) ** 2 / denom


def _numeric_thresholds(x: np.ndarray, max_candidates: int) -> np.ndarray:
    distinct = np.unique(x)
    if distinct.size < 2:
        return np.empty(0)
    mids = (distinct[:-1] + distinct[1:]) / 2
    if mids.size <= max_candidates:
        return mids
    # thin to midpoints just above evenly spaced sample quantiles
    qs = np.quantile(x, np.linspace(0, 1, max_candidates + 2)[1:-1], method="inverted_cdf")
    pos = np.minimum(np.searchsorted(distinct, qs), mids.size - 1)
    return np.unique(mids[pos])


def _best_numeric(data, idx, name, config):
    col = data.columns[name][idx]
    missing = np.isnan(col)
    keep = idx[~missing]
    order = np.argsort(col[~missing], kind="stable")
    x = col[~missing][order]
    thresholds = _numeric_thresholds(x, config.max_candidates)
    if thresholds.size == 0:
        return None
    keep = keep[order]
    miss = _sums(data, idx[missing]) if missing.any() else np.zeros(6)
    scores = split_scan(x, data.w[keep], data.y[keep], thresholds, miss, config.min_leaf_per_variant)
    if np.all(np.isnan(scores)):
        return None
    i = int(np.nanargmax(scores))
    n_left = np.searchsorted(x, thresholds[i], side="right")
    missing_left = bool(n_left >= x.size - n_left)
    return Split(name, "numeric", float(thresholds[i]), None, missing_left, float(scores[i]), int(missing.sum()))


def _best_categorical(data, idx, name, config):
    codes = data.columns[name][idx]
    labels = data.labels[name]
    k = len(labels)
    w, y = data.w[idx], data.y[idx]
    per = np.zeros((k + 1, 6))  # last row collects missing values
    slot = np.where(codes < 0, k, codes)
    for v in (0, 1):
        m = w == v
        per[:, 3 * v] = np.bincount(slot[m], minlength=k + 1)
        per[:, 3 * v + 1] = np.bincount(slot[m], weights=y[m], minlength=k + 1)
        per[:, 3 * v + 2] = np.bincount(slot[m], weights=y[m] * y[m], minlength=k + 1)
    total, miss = per[:k].sum(axis=0), per[k]
    best = None
    for c in range(k):
        left, right = per[c].copy(), total - per[c]
        if left[0] + left[3] == 0 or right[0] + right[3] == 0:
            continue
        missing_left = bool(left[0] + left[3] >= right[0] + right[3])
        if missing_left:
            left += miss
        else:
            right += miss
        try:
            score = split_score(_lift_from_sums(left), _lift_from_sums(right), config.min_leaf_per_variant)
        except DerstatsError:
            continue
        if best is None or score > best.score:
            best = Split(name, "categorical", None, labels[c], missing_left, float(score), int(miss[0] + miss[3]))
    return best


def _best_split(data, idx, config, pool):
    def search(spec):
        if spec.kind == "numeric":
            return _best_numeric(data, idx, spec.name, config)
        return _best_categorical(data, idx, spec.name, config)

    found = list(pool.map(search, data.features)) if pool else [search(f) for f in data.features]
    best = None
    for s in found:  # strict comparison keeps the earlier feature on ties
        if s is not None and (best is None or s.score > best.score):
            best = s
    return best


def _safe_lift(sums, level):
    try:
        return _lift_from_sums(sums, level)
    except DerstatsError:
        return None


def grow_tree(data: TreeData, config: TreeConfig = TreeConfig(), idx=None) -> TreeNode:
    """Greedy recursive partitioning of the training units ``idx``."""
    idx = np.arange(data.n) if idx is None else np.asarray(idx)
    counter = iter(range(1 << 62))
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None

    def build(rows, depth, path):
        sums = _sums(data, rows)
        node = TreeNode(next(counter), depth, path, (int(sums[0]), int(sums[3])),
                        _safe_lift(sums, config.ci_level))
        if depth >= config.max_depth:
            return node
        split = _best_split(data, rows, config, pool)
        if split is None or not split.score > 0:
            return node
        go = split.goes_left(data, rows)
        left = build(rows[go], depth + 1, path + (split.describe(True),))
        right = build(rows[~go], depth + 1, path + (split.describe(False),))
        return replace(node, split=split, left=left, right=right)

    try:
        return build(idx, 0, ())
    finally:
        if pool:
            pool.shutdown()


def _collapse(node: TreeNode, node_id: int) -> TreeNode:
    if node.is_leaf:
        return node
    if node.node_id == node_id:
        return replace(node, split=None, left=None, right=None)
    return replace(node, left=_collapse(node.left, node_id), right=_collapse(node.right, node_id))


def nested_partitions(tree: TreeNode) -> list[TreeNode]:
    """The grown tree, then each tree obtained by collapsing the frontier split
    (both children leaves) with the lowest training t², down to the root."""
    family = [tree]
    current = tree
    while not current.is_leaf:
        frontier = [n for n in current.internal_nodes() if n.left.is_leaf and n.right.is_leaf]
        weakest = min(frontier, key=lambda n: (n.split.score, n.node_id))
        current = _collapse(current, weakest.node_id)
        family.append(current)
    return family


def _estimate(tree: TreeNode, data: TreeData, idx, level) -> TreeNode:
    leaf_of = tree.apply(data, idx)

    def fill(node):
        # returns (node, sums); internal nodes add up their children
        if node.is_leaf:
            sums = _sums(data, idx[leaf_of == node.node_id])
            kids = {}
        else:
            (left, ls), (right, rs) = fill(node.left), fill(node.right)
            sums, kids = ls + rs, {"left": left, "right": right}
        return replace(node, lift=_safe_lift(sums, level), n_estimation=(int(sums[0]), int(sums[3])), **kids), sums

    return fill(tree)[0]


def cis_disjoint(tree: TreeNode) -> bool:
    lifts = [leaf.lift for leaf in tree.leaves()]
    if len(lifts) == 1:
        return True
    if any(l is None for l in lifts):
        return False
    return all(not a.overlaps(b) for i, a in enumerate(lifts) for b in lifts[i + 1:])


def prune_tree(tree: TreeNode, data: TreeData, config: TreeConfig = TreeConfig(), idx=None) -> TreeNode:
    """Largest member of the nested family whose estimation-set leaf CIs are
    pairwise disjoint; the root alone when none qualifies. Leaves carry
    estimation-set lifts."""
    idx = np.arange(data.n) if idx is None else np.asarray(idx)
    for candidate in nested_partitions(tree):
        # the last candidate is a single leaf, which always qualifies
        estimated = _estimate(candidate, data, idx, config.ci_level)
        if cis_disjoint(estimated):
            return estimated


@dataclass
class CausalTreeResult:
    tree: TreeNode
    grown: TreeNode
    train_idx: np.ndarray
    estimation_idx: np.ndarray
    cohorts: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"tree": self.tree.to_dict(), "cohorts": self.cohorts}, indent=2, allow_nan=False,
                          default=_json_default)

    def write_cohorts_csv(self, path):
        cols = ["leaf", "path", "n_control", "n_treatment", "n_units", "lift", "ci_low", "ci_high"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            w.writeheader()
            for c in self.cohorts:
                w.writerow({**c, "path": " & ".join(c["path"]) or "all"})


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def honest_split(n: int, config: TreeConfig) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(config.seed).permutation(n)
    cut = int(round(config.honest_fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


def cohort_report(tree: TreeNode, data: TreeData) -> list[dict]:
    """One row per leaf: predicate path, estimation-set lift and CI, and the
    number of units of the full dataset that fall in the leaf."""
    leaf_of = tree.apply(data)
    rows = []
    for leaf in tree.leaves():
        lift = leaf.lift
        rows.append({
            "leaf": leaf.node_id,
            "path": list(leaf.path),
            "n_control": leaf.n_estimation[0],
            "n_treatment": leaf.n_estimation[1],
            "n_units": int(np.sum(leaf_of == leaf.node_id)),
            "lift": float(lift.lift) if lift else None,
            "ci_low": float(lift.ci_low) if lift else None,
            "ci_high": float(lift.ci_high) if lift else None,
        })
    return rows


def fit_causal_tree(data: TreeData, config: TreeConfig = TreeConfig()) -> CausalTreeResult:
    """Honest split, grow on the training half, prune and re-estimate on the other."""
    train, est = honest_split(data.n, config)
    grown = grow_tree(data, config, train)
    tree = prune_tree(grown, data, config, est)
    return CausalTreeResult(tree, grown, train, est, cohort_report(tree, data))
