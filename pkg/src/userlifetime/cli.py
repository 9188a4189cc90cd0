"""Command-line entry point: file-driven, reproducible experiment stages.

Exit codes: 0 success, 2 user/config error, 3 artifact incompatibility,
1 internal failure. `--workers` bounds internal fan-out and never changes
any output byte.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys

import numpy as np

from . import evaluation as ev
from . import features as ft
from . import synth
from .events import parse_events, label_log, write_labels_csv, write_events_jsonl, ParseError
from .forest import ForestParams, load_model, save_model
from .reports import (
    RunManifest,
    markdown_table,
    score_rows,
    write_bands_csv,
    write_json_report,
    write_markdown_report,
    write_matrix_report_csv,
)

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USER = 2
EXIT_ARTIFACT = 3

TASK_NAMES = {"reg": "regression", "clf": "multiclass", "binary": "binary"}


class UserError(Exception):
    pass


class ArtifactError(Exception):
    pass


def _add_forest_args(sub, with_task=True):
    sub.add_argument("--seed", type=int, required=True)
    sub.add_argument("--estimators", type=int, default=32)
    sub.add_argument("--depth", type=int, default=16)
    sub.add_argument("--max-features", default="sqrt",
                     help="'all', 'sqrt', or a fraction in (0,1]")
    sub.add_argument("--min-samples-leaf", type=int, default=1)
    sub.add_argument("--workers", type=int, default=1)
    if with_task:
        sub.add_argument("--task", choices=sorted(TASK_NAMES), required=True)
        sub.add_argument("--window", choices=sorted(ev.BINARY_WINDOW_SUBSETS),
                         help="binary-task window, e.g. gt_7d")


def _forest_params(args, task=None) -> ForestParams:
    mf = args.max_features
    if mf not in ("all", "sqrt"):
        try:
            mf = float(mf)
        except ValueError:
            raise UserError(f"bad --max-features value {args.max_features!r}")
    return ForestParams(
        n_estimators=args.estimators,
        max_depth=args.depth,
        seed=args.seed,
        task=task or TASK_NAMES[args.task],
        max_features=mf,
        min_samples_leaf=args.min_samples_leaf,
    )


def _load_matrix(prefix) -> ft.FeatureMatrix:
    try:
        return ft.read_matrix_csv(f"{prefix}.csv", f"{prefix}.json")
    except FileNotFoundError as exc:
        raise UserError(f"matrix not found: {exc.filename}")
    except ValueError as exc:
        raise ArtifactError(str(exc))


def _plan(fm, args) -> ev.FoldPlan:
    n = len(fm.user_ids)
    if n < args.folds:
        raise UserError(f"matrix has {n} rows, cannot make {args.folds} folds")
    return ev.kfold_split(n, args.folds, args.seed)


def _check_window(args, task):
    if task == "binary" and not args.window:
        raise UserError("--task binary requires --window")
    return args.window if task == "binary" else None


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    if bool(args.preset) == bool(args.config):
        raise UserError("exactly one of --preset/--config is required")
    if args.preset:
        config = synth.preset(args.preset, seed=args.seed or 0,
                              signal_strength=1.0 if args.signal is None else args.signal)
    else:
        config = synth.load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        config.signal_strength = args.signal if args.signal is not None else config.signal_strength
    log = synth.generate(config)
    with open(args.out, "w") as fh:
        write_events_jsonl(log, fh)
    print(f"wrote {sum(len(u.events) for u in log.users.values())} events "
          f"for {len(log.users)} users to {args.out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    try:
        with open(args.log) as fh:
            log = parse_events(fh, fmt="csv" if args.log.endswith(".csv") else "jsonl")
    except FileNotFoundError:
        raise UserError(f"log not found: {args.log}")
    for w in log.warnings:
        print(f"warning: {w}", file=sys.stderr)
    catalog = ft.subset_filter(ft.default_catalog(), args.subset)
    fm = ft.extract_matrix(log, catalog, include_blocked=not args.exclude_blocked)
    if not fm.user_ids:
        print("warning: empty log, writing header-only matrix", file=sys.stderr)
    ft.write_matrix_csv(fm, f"{args.out}.csv", f"{args.out}.json")
    with open(f"{args.out}.labels.csv", "w") as fh:
        write_labels_csv(label_log(log, include_blocked=not args.exclude_blocked), fh)
    print(f"extracted {len(fm.user_ids)} users x {len(fm.columns)} features -> {args.out}.csv")
    return EXIT_OK


def cmd_train(args) -> int:
    fm = _load_matrix(args.matrix)
    task = TASK_NAMES[args.task]
    window = _check_window(args, task)
    trained = ev.train_full(fm, _forest_params(args), window=window,
                            dataset_id=args.matrix, workers=args.workers)
    save_model(trained.model, args.out)
    print(f"trained {task} forest ({args.estimators} trees, depth {args.depth}) -> {args.out}")
    return EXIT_OK


def cmd_gridsearch(args) -> int:
    fm = _load_matrix(args.matrix)
    task = TASK_NAMES[args.task]
    window = _check_window(args, task)
    try:
        with open(args.grid) as fh:
            grid_spec = json.load(fh)
    except FileNotFoundError:
        raise UserError(f"grid file not found: {args.grid}")
    except json.JSONDecodeError as exc:
        raise UserError(f"grid file is not valid JSON: {exc}")
    grid = [
        ForestParams(n_estimators=n, max_depth=d, seed=args.seed, task=task,
                     max_features=mf, min_samples_leaf=args.min_samples_leaf)
        for n, d, mf in itertools.product(
            grid_spec.get("n_estimators", [args.estimators]),
            grid_spec.get("max_depth", [args.depth]),
            grid_spec.get("max_features", [args.max_features]),
        )
    ]
    result = ev.grid_search(fm, grid, _plan(fm, args), window, workers=args.workers)
    manifest = RunManifest.collect(args.seed, [f"{args.matrix}.csv"], fm.catalog_version)
    write_json_report(f"{args.out}.json", {"grid": result.as_rows(), "task": task}, manifest)
    rows = [[r["n_estimators"], r["max_depth"], r["max_features"], r["mean"], r["stddev"]]
            for r in result.as_rows()]
    write_markdown_report(
        f"{args.out}.md", "Grid search",
        [("Ranked results", markdown_table(
            ["estimators", "depth", "max_features", "mean", "stddev"], rows))],
        manifest,
    )
    best = result.best
    print(f"best: {best.n_estimators} trees, depth {best.max_depth}, "
          f"max_features={best.max_features}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    fm = _load_matrix(args.matrix)
    task = TASK_NAMES[args.task]
    window = _check_window(args, task)
    summary = ev.cross_validate(fm, _forest_params(args), _plan(fm, args),
                                window, workers=args.workers)
    manifest = RunManifest.collect(args.seed, [f"{args.matrix}.csv"], fm.catalog_version)
    report = {
        "task": task,
        "metric": summary.metric,
        "mean": summary.mean,
        "stddev": summary.stddev,
        "per_fold": summary.per_fold,
        "folds": args.folds,
    }
    write_json_report(f"{args.out}.json", report, manifest)
    write_markdown_report(
        f"{args.out}.md", "Cross-validation",
        [("Scores", markdown_table(["dataset", "mean", "stddev", "per fold"],
                                   score_rows([(args.matrix, summary)])))],
        manifest,
    )
    print(f"{summary.metric}: {summary.mean:.4f} +- {summary.stddev:.4f}")
    return EXIT_OK


def _named_matrices(specs) -> dict[str, ft.FeatureMatrix]:
    out = {}
    for item in specs:
        if "=" not in item:
            raise UserError(f"expected NAME=MATRIX_PREFIX, got {item!r}")
        name, prefix = item.split("=", 1)
        out[name] = _load_matrix(prefix)
    versions = {fm.catalog_version for fm in out.values()}
    if len(versions) > 1:
        raise ArtifactError(f"catalog_version mismatch: {sorted(versions)}")
    return out


def cmd_crossapply(args) -> int:
    datasets = _named_matrices(args.matrix)
    task = TASK_NAMES[args.task]
    window = _check_window(args, task)
    params = _forest_params(args)
    models, diagonal = {}, {}
    for name, fm in datasets.items():
        models[name] = ev.train_full(fm, params, window=window, dataset_id=name,
                                     workers=args.workers)
        diagonal[name] = ev.cross_validate(fm, params, _plan(fm, args), window,
                                           workers=args.workers).mean
    try:
        matrix = ev.cross_apply(models, datasets, diagonal, task, window)
    except ValueError as exc:
        raise ArtifactError(str(exc))
    manifest = RunManifest.collect(
        args.seed, [f"{s.split('=', 1)[1]}.csv" for s in args.matrix],
        next(iter(datasets.values())).catalog_version,
    )
    write_json_report(
        f"{args.out}.json",
        {"task": task, "names": matrix.names, "scores": matrix.scores},
        manifest,
    )
    write_matrix_report_csv(f"{args.out}.csv", matrix.names, matrix.scores)
    rows = [[n, *row] for n, row in zip(matrix.names, matrix.scores)]
    write_markdown_report(
        f"{args.out}.md", "Cross application",
        [("model x dataset", markdown_table(["model", *matrix.names], rows))],
        manifest,
    )
    print(f"cross-application matrix over {len(matrix.names)} datasets -> {args.out}.csv")
    return EXIT_OK


def cmd_importance(args) -> int:
    models = {}
    for item in args.model:
        if "=" not in item:
            raise UserError(f"expected NAME=MODEL.json, got {item!r}")
        name, path = item.split("=", 1)
        try:
            models[name] = load_model(path)
        except FileNotFoundError:
            raise UserError(f"model not found: {path}")
        except ValueError as exc:
            raise ArtifactError(str(exc))
    versions = {m.catalog_version for m in models.values()}
    if len(versions) > 1:
        raise ArtifactError(f"catalog_version mismatch: {sorted(versions)}")
    try:
        names, rho = ev.importance_correlation(models)
    except ValueError as exc:
        raise ArtifactError(str(exc))
    manifest = RunManifest.collect(args.seed, [], versions.pop())
    write_json_report(f"{args.out}.json", {"names": names, "spearman": rho}, manifest)
    write_matrix_report_csv(f"{args.out}.csv", names, rho)
    print(f"importance correlations for {len(names)} models -> {args.out}.csv")
    return EXIT_OK


def cmd_bands(args) -> int:
    fm = _load_matrix(args.matrix)
    features = args.features.split(",") if args.features else None
    if features:
        missing = [f for f in features if f not in fm.columns]
        if missing:
            raise UserError(f"unknown features: {missing}")
    bands = ev.quantile_bands(fm, features)
    manifest = RunManifest.collect(args.seed, [f"{args.matrix}.csv"], fm.catalog_version)
    payload = {
        name: {
            "counts": b.counts,
            "quantiles": {k: v for k, v in b.quantiles.items()},
            "low_confidence": b.low_confidence,
            "constant": b.constant,
        }
        for name, b in bands.items()
    }
    write_json_report(f"{args.out}.json", payload, manifest)
    write_bands_csv(f"{args.out}.csv", bands)
    print(f"quantile bands for {len(bands)} features -> {args.out}.csv")
    return EXIT_OK


def cmd_binary(args) -> int:
    fm = _load_matrix(args.matrix)
    params = _forest_params(args, task="binary")
    results = ev.binary_sweep(fm, params, _plan(fm, args), workers=args.workers)
    manifest = RunManifest.collect(args.seed, [f"{args.matrix}.csv"], fm.catalog_version)
    report = {
        w: {
            "subset": r["subset"],
            "binary_mean": r["binary"].mean,
            "binary_stddev": r["binary"].stddev,
            "multiclass_mean": r["multiclass"].mean,
            "multiclass_stddev": r["multiclass"].stddev,
        }
        for w, r in results.items()
    }
    write_json_report(f"{args.out}.json", report, manifest)
    rows = [[w, r["subset"], r["binary_mean"], r["multiclass_mean"]]
            for w, r in report.items()]
    write_markdown_report(
        f"{args.out}.md", "Binary lifetime prediction",
        [("Per window", markdown_table(
            ["window", "subset", "binary F1", "multiclass F1"], rows))],
        manifest,
    )
    print("binary sweep done -> " + args.out + ".md")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="userlifetime",
        description="Generate, extract, train and evaluate user-lifetime predictors.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    g = subs.add_parser("generate", help="generate a synthetic event log")
    g.add_argument("--preset", choices=synth.PRESET_NAMES)
    g.add_argument("--config", help="generator config JSON file")
    g.add_argument("--seed", type=int)
    g.add_argument("--signal", type=float, default=None)
    g.add_argument("-o", "--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = subs.add_parser("extract", help="extract a feature matrix from an event log")
    e.add_argument("--log", required=True)
    e.add_argument("--subset", default="all", choices=ft.SUBSET_IDS)
    e.add_argument("--exclude-blocked", action="store_true")
    e.add_argument("-o", "--out", required=True, help="output prefix")
    e.set_defaults(func=cmd_extract)

    for name, fn, extra in (
        ("train", cmd_train, "fit a forest on a matrix"),
        ("gridsearch", cmd_gridsearch, "grid search with cross-validation"),
        ("evaluate", cmd_evaluate, "cross-validate one configuration"),
    ):
        s = subs.add_parser(name, help=extra)
        s.add_argument("--matrix", required=True, help="matrix prefix from `extract`")
        _add_forest_args(s)
        if name == "gridsearch":
            s.add_argument("--grid", required=True, help="grid JSON file")
        if name != "train":
            s.add_argument("--folds", type=int, default=5)
        s.add_argument("-o", "--out", required=True)
        s.set_defaults(func=fn)

    c = subs.add_parser("crossapply", help="cross-apply per-community models")
    c.add_argument("--matrix", nargs="+", required=True, metavar="NAME=PREFIX")
    _add_forest_args(c)
    c.add_argument("--folds", type=int, default=5)
    c.add_argument("-o", "--out", required=True)
    c.set_defaults(func=cmd_crossapply)

    i = subs.add_parser("importance", help="importance correlation across models")
    i.add_argument("--model", nargs="+", required=True, metavar="NAME=MODEL.json")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("-o", "--out", required=True)
    i.set_defaults(func=cmd_importance)

    b = subs.add_parser("bands", help="per-feature lifetime-bucket quantile bands")
    b.add_argument("--matrix", required=True)
    b.add_argument("--features", help="comma-separated feature names (default: all)")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("-o", "--out", required=True)
    b.set_defaults(func=cmd_bands)

    n = subs.add_parser("binary", help="binary lifetime prediction per window")
    n.add_argument("--matrix", required=True)
    _add_forest_args(n, with_task=False)
    n.add_argument("--folds", type=int, default=5)
    n.add_argument("-o", "--out", required=True)
    n.set_defaults(func=cmd_binary)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UserError, synth.ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except Exception as exc:  # noqa: BLE001 - stable exit-code contract
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
