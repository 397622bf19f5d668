"""``dpselect`` command line.

Exit codes: 0 success, 1 a check failed (audit flag, counterexample not
reproduced, ``--check`` violated), 2 bad configuration or unreadable input.

Every run writes ``<out>.csv`` and ``<out>.json`` when ``--out`` is given.
The CSV opens with a ``# config=`` comment line holding the full
configuration, then a header row. Floats are rounded to 12 significant
digits. Wall-clock timings go to the JSON only, so oracle-mode CSVs are
byte-identical across runs.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from dpselect import analysis, audit, kernels, percentile, tabular, trees
from dpselect.mechanisms import MECHANISM_NAMES
from dpselect.noise import PrivacyBudget
from dpselect.percentile import ExperimentRow

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2
FIXED_COLUMNS = ("application", "mechanism", "epsilon", "delta", "metric", "value", "bound", "seed")


class ConfigError(Exception):
    """Bad flags or unreadable input; maps to exit code 2."""


# formatting -----------------------------------------------------------------


def _round(v):
    if isinstance(v, bool) or v is None:
        return v
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return v
        return float(f"{v:.12g}")
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, dict):
        return {k: _round(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_round(x) for x in v]
    return v


def _cell(v) -> str:
    v = _round(v)
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def rows_to_csv(rows: Sequence[ExperimentRow], config: dict) -> str:
    extras = sorted({k for r in rows for k in r.extra})
    buf = io.StringIO()
    buf.write("# config=" + json.dumps(_round(config), sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(FIXED_COLUMNS) + extras)
    for r in rows:
        d = r.as_dict()
        writer.writerow([_cell(d.get(c)) for c in FIXED_COLUMNS] + [_cell(r.extra.get(c)) for c in extras])
    return buf.getvalue()


def rows_to_json(rows: Sequence[ExperimentRow], config: dict) -> str:
    payload = {"config": config, "rows": [r.as_dict() for r in rows]}
    return json.dumps(_round(payload), sort_keys=True, indent=1) + "\n"


def _write(path: Path, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc.strerror}") from exc


def emit(args, rows: Sequence[ExperimentRow], config: dict) -> None:
    csv_text = rows_to_csv(rows, config)
    if args.out:
        out = Path(args.out)
        _write(out.with_suffix(".csv"), csv_text)
        _write(out.with_suffix(".json"), rows_to_json(rows, config))
    else:
        sys.stdout.write(csv_text)


def _config(args) -> dict:
    # the output location is not part of the experiment
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "out")}
    cfg["backend"] = kernels.BACKEND
    return cfg


# argument helpers -------------------------------------------------------------


def _floats(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _names(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _positive_eps(eps: Sequence[float]) -> None:
    bad = [e for e in eps if not e > 0]
    if bad:
        raise ConfigError(f"every epsilon must be positive, got {bad}")


def _check_names(names, allowed, what):
    bad = [n for n in names if n not in allowed]
    if bad:
        raise ConfigError(f"unknown {what} {bad}; choose from {', '.join(allowed)}")


def _existing(path: Optional[str], what: str) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    return p


# percentile -------------------------------------------------------------------


def _read_values(path: Path) -> np.ndarray:
    vals = []
    with path.open(newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            try:
                vals.append(float(row[0]))
            except ValueError:
                if i == 0:
                    continue  # header
                raise ConfigError(f"{path}: line {i + 1} is not a number: {row[0]!r}")
    if not vals:
        raise ConfigError(f"{path}: no values")
    return np.asarray(vals)


def cmd_percentile(args) -> int:
    _positive_eps(args.epsilons)
    _check_names(args.mechanisms, MECHANISM_NAMES, "mechanisms")
    path = _existing(args.dataset, "dataset")
    if path is not None:
        data = _read_values(path)
        if data.min() < 0 or data.max() > args.Lambda:
            raise ConfigError(f"{path}: values must lie in [0, {args.Lambda}]")
        inst = percentile.PercentileInstance(data, args.Lambda, args.p)
    else:
        inst = percentile.synthetic_instance(args.j, args.Lambda, args.p)
    rows = percentile.run_percentile_experiment(
        inst, args.mechanisms, args.epsilons, args.mode, args.seed,
        delta=args.delta, dof=args.dof, sigma=args.sigma, trials=args.trials, rule=args.rule,
    )
    emit(args, rows, _config(args))
    if args.check:
        aee = {(r.mechanism, r.epsilon): r.value for r in rows}
        snm = [m for m in args.mechanisms if m.startswith("SNM")]
        base = [m for m in args.mechanisms if not m.startswith("SNM")]
        bad = [
            (s, b, e) for e in args.epsilons for s in snm for b in base
            if aee[(s, e)] > aee[(b, e)] + 1e-12
        ]
        for s, b, e in bad:
            print(f"check failed: {s} AEE {aee[(s, e)]:.6g} > {b} AEE {aee[(b, e)]:.6g} at eps={e:g}", file=sys.stderr)
        return EXIT_CHECK if bad else EXIT_OK
    return EXIT_OK


# trees and forests -------------------------------------------------------------


def _load_table(args) -> tabular.TabularDataset:
    if args.dataset is None:
        if args.synthetic == "categorical":
            return tabular.make_categorical(args.rows, args.seed)
        if args.synthetic == "axis":
            return tabular.make_axis_separable(args.rows, args.seed)
        return tabular.make_separable(args.rows, args.seed)
    data_path = _existing(args.dataset, "dataset")
    if args.schema is None:
        raise ConfigError("--schema is required with --dataset")
    schema_path = _existing(args.schema, "schema")
    try:
        schema = tabular.Schema.from_json(schema_path)
        return tabular.read_csv(data_path, schema)
    except (tabular.SchemaError, json.JSONDecodeError) as exc:
        raise ConfigError(str(exc)) from exc


def kfold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded row shuffle cut into ``folds`` parts; labels are never looked at."""
    if not 2 <= folds <= n:
        raise ConfigError(f"need 2 <= folds <= rows, got folds={folds}, rows={n}")
    order = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(order, folds)]


def train_test_split(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(order[:cut]), np.sort(order[cut:])


def _accuracy_rows(app, name, eps, delta, seed, accs, elapsed, extra) -> list[ExperimentRow]:
    accs = np.asarray(accs, dtype=float)
    extra = dict(extra, runs=int(accs.size))
    return [
        ExperimentRow(app, name, eps, delta, "accuracy_mean", float(accs.mean()), None, seed, elapsed, extra),
        ExperimentRow(app, name, eps, delta, "accuracy_std", float(accs.std()), None, seed, elapsed, extra),
    ]


def cmd_tree(args) -> int:
    _positive_eps(args.epsilons)
    _check_names(args.mechanisms, trees.SPLIT_MECHANISMS, "split mechanisms")
    data = _load_table(args)
    rows = []
    for name in args.mechanisms:
        for eps in args.epsilons:
            start = time.perf_counter()
            accs = []
            for rep in range(args.repeats):
                folds = kfold_indices(data.n_rows, args.folds, args.seed + rep)
                for f, test in enumerate(folds):
                    train = np.setdiff1d(np.arange(data.n_rows), test)
                    tree = trees.build_diffp_id3(
                        data.subset(train), depth=args.depth, epsilon=eps, split_mechanism=name,
                        seed=[args.seed, rep, f], delta=args.delta, dof=args.dof, sigma=args.sigma,
                        bins=args.bins,
                    )
                    accs.append(tree.accuracy(data.subset(test)))
            elapsed = (time.perf_counter() - start) * 1000.0
            rows += _accuracy_rows("tree", name, eps, args.delta, args.seed, accs, elapsed, {"depth": args.depth})
    emit(args, rows, _config(args))
    return EXIT_OK


def cmd_forest(args) -> int:
    _positive_eps(args.epsilons)
    _check_names(args.mechanisms, trees.LEAF_MECHANISMS, "leaf mechanisms")
    data = _load_table(args)
    rows = []
    for name in args.mechanisms:
        for eps in args.epsilons:
            start = time.perf_counter()
            accs = []
            for rep in range(args.repeats):
                train, test = train_test_split(data.n_rows, 0.8, args.seed + rep)
                forest = trees.build_random_forest(
                    data.subset(train), args.trees, depth=args.depth, epsilon=eps, leaf_mechanism=name,
                    seed=args.seed + rep, delta=args.delta, dof=args.dof, sigma=args.sigma,
                )
                accs.append(forest.accuracy(data.subset(test)))
            elapsed = (time.perf_counter() - start) * 1000.0
            extra = {"depth": args.depth, "trees": args.trees}
            rows += _accuracy_rows("forest", name, eps, args.delta, args.seed, accs, elapsed, extra)
    emit(args, rows, _config(args))
    if args.min_accuracy is not None:
        low = [r for r in rows if r.metric == "accuracy_mean" and r.value < args.min_accuracy]
        for r in low:
            print(f"check failed: {r.mechanism} accuracy {r.value:.4f} < {args.min_accuracy} at eps={r.epsilon:g}", file=sys.stderr)
        return EXIT_CHECK if low else EXIT_OK
    return EXIT_OK


# audit, bounds, counterexample ------------------------------------------------


def _candidate_name(o: str) -> str:
    return f"C{int(o) + 1}"


def cmd_audit(args) -> int:
    _positive_eps(args.epsilons)
    _check_names(args.mechanisms, audit.AUDITED_MECHANISMS + (audit.UNSAFE_NAME,), "mechanisms")
    if args.trials < 10**5:
        raise ConfigError("--trials must be at least 100000 for an audit")
    cases = [audit.voting_case()] if args.pairs == "voting" else audit.default_cases(args.pairs_per_model, args.seed)
    start = time.perf_counter()
    reports = audit.run_audit_suite(
        args.mechanisms, args.epsilons, cases, delta=args.delta, trials=args.trials, seed=args.seed,
        dof=args.dof, sigma=args.sigma,
    )
    elapsed = time.perf_counter() - start
    if args.pairs == "voting":
        for rep in reports:
            rep.outcomes = [_candidate_name(o) for o in rep.outcomes]
            for flag in rep.flags:
                flag["outcome"] = _candidate_name(flag["outcome"])
    flagged = [r for r in reports if r.flagged]
    summary = {
        "config": _config(args),
        "reports": len(reports),
        "flagged": len(flagged),
        "runtime_s": elapsed,
        "flags": [
            {"mechanism": r.mechanism, "epsilon": r.epsilon, "x": list(r.x), "y": list(r.y), **f}
            for r in flagged for f in r.flags
        ],
    }
    text = json.dumps(_round(summary), sort_keys=True, indent=1) + "\n"
    if args.out:
        out = Path(args.out)
        _write(out.with_suffix(".json"), text)
        full = {"config": summary["config"], "reports": [r.to_dict() for r in reports]}
        _write(out.with_name(out.stem + "_reports.json"), json.dumps(_round(full), sort_keys=True) + "\n")
    sys.stdout.write(text)
    for r in flagged:
        names = ", ".join(f["outcome"] for f in r.flags)
        print(f"FLAG {r.mechanism} eps={r.epsilon:g}: outcomes {names}", file=sys.stderr)
    return EXIT_CHECK if flagged else EXIT_OK


def cmd_bounds(args) -> int:
    _positive_eps(args.epsilons)
    if args.outcomes < 1:
        raise ConfigError("--outcomes must be at least 1")
    if args.smooth < 0 or not args.delta_u > 0:
        raise ConfigError("need --smooth >= 0 and --delta-u > 0")
    rows = []
    for eps in args.epsilons:
        snm = analysis.snm_error_bound(args.smooth, eps, args.outcomes)
        rnm = analysis.rnm_error_bound(args.delta_u, eps, args.outcomes)
        extra = {"smooth_sensitivity": args.smooth, "delta_u": args.delta_u, "outcomes": args.outcomes}
        rows.append(ExperimentRow("bounds", "SNM-Lap", eps, args.delta, "error_bound", snm, snm, args.seed, 0.0, extra))
        rows.append(ExperimentRow("bounds", "RNM-Exp", eps, args.delta, "error_bound", rnm, rnm, args.seed, 0.0, extra))
    emit(args, rows, _config(args))
    return EXIT_OK


def cmd_counterexample(args) -> int:
    start = time.perf_counter()
    report = trees.reproduce_voting_counterexample(args.epsilon)
    report["runtime_s"] = time.perf_counter() - start
    text = json.dumps(_round(report), sort_keys=True, indent=1) + "\n"
    if args.out:
        _write(Path(args.out).with_suffix(".json"), text)
    sys.stdout.write(text)
    return EXIT_OK if report["reproduced"] else EXIT_CHECK


# parser -----------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, mechanisms: str, epsilons: str) -> None:
    p.add_argument("--mechanisms", type=_names, default=_names(mechanisms))
    p.add_argument("--epsilons", type=_floats, default=_floats(epsilons))
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--dof", type=int, default=3)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output path prefix; .csv/.json are appended")


def _tabular(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", default=None, help="CSV with a header row")
    p.add_argument("--schema", default=None, help="JSON schema sidecar (required with --dataset)")
    p.add_argument("--synthetic", choices=("separable", "axis", "categorical"), default="axis")
    p.add_argument("--rows", type=int, default=5000, help="rows of the synthetic dataset")
    p.add_argument("--depth", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpselect", description="Private selection experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("percentile", help="absolute expected error of private percentiles")
    _common(p, "EM,PF,SNM-Lap,SNM-T,SNM-LLN", "0.1,1,10,100")
    p.add_argument("--dataset", default=None, help="one numeric column; a header line is skipped")
    p.add_argument("--lambda", dest="Lambda", type=float, default=100.0, help="upper end of the value range")
    p.add_argument("--p", type=int, default=50)
    p.add_argument("--j", type=int, default=5, help="repetition radius of the bundled synthetic instance")
    p.add_argument("--trials", type=int, default=10**6)
    p.add_argument("--mode", choices=("oracle", "montecarlo"), default="oracle")
    p.add_argument("--rule", choices=percentile.SENSITIVITY_RULES, default="exact")
    p.add_argument("--check", action="store_true", help="exit 1 unless every SNM AEE <= every baseline AEE")
    p.set_defaults(func=cmd_percentile)

    p = sub.add_parser("tree", help="k-fold accuracy of private ID3")
    _common(p, ",".join(trees.SPLIT_MECHANISMS), "0.5,1,2")
    _tabular(p)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--bins", type=int, default=tabular.DEFAULT_BINS)
    p.set_defaults(func=cmd_tree, depth_default=3)

    p = sub.add_parser("forest", help="80/20 accuracy of private random forests")
    _common(p, "EM,PF,SNM-Lap,SNM-T,SNM-LLN", "0.05,0.5,5")
    _tabular(p)
    p.add_argument("--trees", type=int, default=32)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--min-accuracy", type=float, default=None, help="exit 1 if any mean accuracy is lower")
    p.set_defaults(func=cmd_forest, depth_default=5)

    p = sub.add_parser("audit", help="empirical privacy audit on neighbouring databases")
    _common(p, audit.UNSAFE_NAME, "0.5")
    p.add_argument("--pairs", choices=("voting", "suite"), default="voting")
    p.add_argument("--pairs-per-model", type=int, default=18)
    p.add_argument("--trials", type=int, default=audit.DEFAULT_TRIALS)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("bounds", help="expected-error bounds for SNM-Lap and RNM-Exp")
    _common(p, "SNM-Lap,RNM-Exp", "0.5,1,2")
    p.add_argument("--smooth", type=float, required=True, help="smooth sensitivity S")
    p.add_argument("--delta-u", type=float, default=1.0, help="global sensitivity")
    p.add_argument("--outcomes", type=int, required=True, help="number of outcomes |R|")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("counterexample", help="exponential weights with smooth sensitivity leak")
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_counterexample)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    if getattr(args, "depth", "absent") is None:
        args.depth = args.depth_default
    if hasattr(args, "depth_default"):
        del args.depth_default
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
