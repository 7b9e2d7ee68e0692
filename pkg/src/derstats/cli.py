"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or config error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DerstatsError

log = logging.getLogger("derstats")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _load_toml(path):
    import tomli

    with open(path, "rb") as fh:
        return tomli.load(fh)


def _alert_config(args):
    from .alerting import AlertConfig

    raw = _load_toml(args.config) if args.config else {}
    overrides = {
        "alpha": args.alpha,
        "variance_method": args.variance_method,
        "replicates": args.replicates,
        "seed": args.seed,
    }
    if getattr(args, "metric", None):
        overrides["metrics"] = args.metric
    if getattr(args, "groups", None):
        overrides["group_universe"] = args.groups
    if getattr(args, "pair", None):
        overrides["variant_pairs"] = [args.pair]
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    return AlertConfig.from_mapping(raw, **overrides)


def _datasets(args):
    from .ingest import IngestConfig, read_experiment_dir

    cfg = IngestConfig.from_mapping(_load_toml(args.config)) if getattr(args, "config", None) else None
    return read_experiment_dir(args.input, cfg)


def _write(text: str, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_der(args):
    from .alerting import _finite, enumerate_comparisons, comparison_delta

    config = _alert_config(args)
    datasets = _datasets(args)
    plan = enumerate_comparisons(datasets, config)
    by_id = {d.experiment_id: d for d in datasets}
    rows = []
    for index, comp in enumerate(plan.attempted):
        try:
            d = comparison_delta(by_id[comp.experiment_id], comp, config, index)
        except DerstatsError as exc:
            rows.append({"comparison": comp.label(), "error": f"{exc.code}: {exc}"})
            continue
        lo, hi = d.confidence_interval()
        rows.append({"comparison": comp.label(), "d_baseline": d.control.value, "d_variant": d.treatment.value,
                     "delta": d.delta, "ci": [lo, hi], "unsquared_delta": d.unsquared_delta,
                     "variance": d.variance, "z": d.z_score, "p_value": d.p_value, "method": d.variance_method})
    rows += [{"comparison": s.comparison.label(), "error": "; ".join(s.reasons)} for s in plan.skipped]
    _write(json.dumps(_finite(rows), indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_scan(args):
    from .alerting import plot_rows, scan, write_plot_csv

    config = _alert_config(args)
    datasets = _datasets(args)
    report = scan(datasets, config)
    _write(report.to_json() + "\n", args.out)
    if args.plot_csv:
        write_plot_csv(plot_rows(datasets, config), args.plot_csv)
    log.info("%d comparisons, %d alerts, %d skipped (threshold %.3g)", report.n_comparisons,
             len(report.alerts), len(report.skipped), report.threshold)
    return EXIT_OK


def cmd_report(args):
    from .alerting import plot_rows, write_plot_csv

    config = _alert_config(args)
    rows = plot_rows(_datasets(args), config, args.level)
    if args.out:
        write_plot_csv(rows, args.out)
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]) if rows else [], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


def cmd_simulate(args):
    import dataclasses

    from . import simulate as sm

    cfg = sm.SimConfig.from_toml(args.config) if args.config else sm.SimConfig.default()
    if args.experiments:
        cfg = dataclasses.replace(cfg, experiments=args.experiments)
    if args.alpha is not None:
        cfg = dataclasses.replace(cfg, alpha=args.alpha)
    if args.emit_data:
        return _emit_data(cfg, args)
    der, did = [], []
    for r in range(args.runs):
        d, di = sm.run_power_study(cfg, args.seed + r)
        der.append(d)
        did.append(di)
        log.info("run %d: der rejections %d (false %d), did rejections %d (false %d)", r, d.n_rejections,
                 d.n_false_discoveries, di.n_rejections, di.n_false_discoveries)
    out = {"config": cfg.to_dict(), "seed": args.seed, "runs": args.runs,
           "der": sm.summarize_runs(der), "did": sm.summarize_runs(did)}
    _write(json.dumps(out, indent=2) + "\n", args.out)
    return EXIT_OK


def _emit_data(cfg, args):
    from . import simulate as sm
    from .ingest import dataset_from_arrays, write_experiment_table

    datasets = []
    for i in range(cfg.experiments):
        rng = sm.experiment_rng(args.seed, i)
        params = sm.draw_experiment_params(cfg, rng)
        exp = sm.generate_experiment(params, rng)
        metrics = {f"metric_{j + 1}": exp.metrics[j] for j in range(len(params))}
        datasets.append(dataset_from_arrays(
            f"exp{i:04d}", np.where(exp.variant == 1, "treatment", "control"),
            np.where(exp.group == 1, "g1", "g0"), metrics))
    write_experiment_table(datasets, args.emit_data)
    log.info("wrote %d experiments to %s", len(datasets), args.emit_data)
    return EXIT_OK


def cmd_tree(args):
    import dataclasses

    from .causal_tree import TreeConfig, TreeData, fit_causal_tree, load_features
    from .errors import ValidationError
    from .ingest import IngestConfig, read_experiment_dir

    features = load_features(args.features)
    cfg = TreeConfig.from_toml(args.config) if args.config else TreeConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    declared = {f.name: f.kind for f in features}
    datasets = read_experiment_dir(args.input, IngestConfig(features=declared))
    if args.experiment:
        datasets = [d for d in datasets if d.experiment_id == args.experiment]
    if len(datasets) != 1:
        raise ValidationError(f"expected exactly one experiment, found {len(datasets)}; use --experiment")
    ds = datasets[0]
    if args.metric not in ds.metrics:
        raise ValidationError(f"metric {args.metric!r} not found; available: {sorted(ds.metrics)}")
    keep = np.isin(ds.variant, [args.baseline, args.variant])
    w = (ds.variant[keep] == args.variant).astype(np.uint8)
    if w.all() or not w.any():
        raise ValidationError(f"need units in both {args.baseline!r} and {args.variant!r}")
    columns = {name: np.asarray(ds.features[name], dtype=object)[keep] for name in declared}
    data = TreeData(columns, w, ds.metrics[args.metric][keep], features)
    result = fit_causal_tree(data, cfg)
    _write(result.to_json() + "\n", args.out)
    if args.cohorts_csv:
        result.write_cohorts_csv(args.cohorts_csv)
    return EXIT_OK


def cmd_fit_dist(args):
    from .distfit import default_candidates, fit_mixture, load_candidates

    with open(args.input, newline="") as fh:
        reader = csv.DictReader(fh)
        column = args.column or (reader.fieldnames or [None])[0]
        if column is None or column not in (reader.fieldnames or []):
            raise DerstatsError(f"column {column!r} not found in {args.input}")
        try:
            values = [float(row[column]) for row in reader]
        except ValueError as exc:
            raise DerstatsError(f"line {reader.line_num}: {exc}") from None
    candidates = load_candidates(args.grid) if args.grid else default_candidates()
    report = fit_mixture(values, candidates, args.samples_per_cell, rng=args.seed, workers=args.workers)
    if args.out:
        report.write_csv(args.out)
    b = report.best
    print(json.dumps({"family": b.family, "params": b.params, "mixture_prob": b.mixture_prob,
                      "ks_statistic": b.ks_statistic, "ks_p_value": b.ks_p_value, "degenerate": b.degenerate}))
    return EXIT_OK


def _add_scan_flags(p, *, config_required=False):
    p.add_argument("--input", required=True, help="CSV/JSONL file or directory of them")
    p.add_argument("--config", required=config_required, help="TOML with [data] and [scan] tables")
    p.add_argument("--alpha", type=float, help="family-wise significance level (default 0.05)")
    p.add_argument("--variance-method", choices=("delta", "bootstrap", "permutation"))
    p.add_argument("--replicates", type=int, help="resampling replicates (default 1000)")
    p.add_argument("--seed", type=int, help="seed for resampling")
    p.add_argument("--metric", action="append", help="metric to analyze (repeatable)")
    p.add_argument("--groups", type=lambda s: s.split(","), help="comma-separated group universe")
    p.add_argument("--pair", nargs=2, metavar=("BASELINE", "VARIANT"), help="compare one explicit variant pair")
    p.add_argument("--workers", type=int, help="threads for independent comparisons")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="derstats", description="Representation-aware A/B test analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("der", help="DER change per comparison")
    _add_scan_flags(p)
    p.add_argument("--out", help="output JSON (default stdout)")
    p.set_defaults(func=cmd_der)

    p = sub.add_parser("scan", help="Bonferroni alert scan over all comparisons")
    _add_scan_flags(p, config_required=True)
    p.add_argument("--out", help="report JSON (default stdout)")
    p.add_argument("--plot-csv", help="also write plot-ready per-comparison CSV")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("report", help="plot-ready lifts, DER change and lift gap per comparison")
    _add_scan_flags(p)
    p.add_argument("--level", type=float, default=0.95, help="confidence level")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("simulate", help="power study or synthetic data")
    p.add_argument("--config", help="TOML with a [simulation] table (default: packaged ranges)")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--experiments", type=int, help="override experiments per run")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="summary JSON (default stdout)")
    p.add_argument("--emit-data", metavar="CSV", help="write simulated experiments as a table instead")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tree", help="honest causal tree on relative lift")
    p.add_argument("--input", required=True)
    p.add_argument("--features", required=True, help="TOML with [[feature]] tables")
    p.add_argument("--metric", required=True)
    p.add_argument("--config", help="TOML with a [tree] table")
    p.add_argument("--experiment", help="experiment_id when the input holds several")
    p.add_argument("--baseline", default="control")
    p.add_argument("--variant", default="treatment")
    p.add_argument("--seed", type=int, help="seed for the honest split")
    p.add_argument("--out", help="tree JSON (default stdout)")
    p.add_argument("--cohorts-csv", help="also write the cohort table")
    p.set_defaults(func=cmd_tree)

    p = sub.add_parser("fit-dist", help="grid-search zero-inflated candidate distributions")
    p.add_argument("--input", required=True, help="CSV with the reference sample")
    p.add_argument("--column", help="column to read (default: first)")
    p.add_argument("--grid", help="TOML with [[candidate]] tables (default grid if omitted)")
    p.add_argument("--samples-per-cell", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="full grid table CSV")
    p.set_defaults(func=cmd_fit_dist)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help and --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    import tomli

    try:
        return args.func(args)
    except (DerstatsError, ValueError, OSError, tomli.TOMLDecodeError, KeyError) as exc:
        print(f"derstats {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"derstats {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
