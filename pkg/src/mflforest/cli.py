"""Command-line entry point: ``mflforest {bench,train,predict,tune}``.

Exit codes: 0 success, 1 data error, 2 configuration error, 3 some method
failed in at least one run (the report is still written).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .benchmark import METHODS, ExperimentConfig, render_report, run_benchmark
from .data import DataError, load_csv, make_imbalanced_blobs, stratified_subsample
from .ensemble import (FitConfig, ModelFormatError, fit_forest, load_model, predict_labels,
                       save_model)
from .loss import LossSpec
from .tree import TreeParams
from .tune import SearchSpace, tune

EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("mflforest")


def _data_args(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--data", required=required, help="input CSV with a header row")
    p.add_argument("--label-col", default="-1", help="label column name or index (default: last)")
    p.add_argument("--positive-label", default="1", help="label value marking an anomaly")


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--trees", type=int, default=20, help="number of trees M")
    p.add_argument("--alpha", type=float, default=0.95)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-depth", type=int, default=None)
    p.add_argument("--min-samples-leaf", type=int, default=1)
    p.add_argument("--complexity", choices=("leaves", "internal"), default="leaves")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mflforest", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="repeated-split comparison of all methods")
    _data_args(b, required=False)
    b.add_argument("--synthetic", action="store_true",
                   help="use a generated imbalanced Gaussian dataset instead of --data")
    b.add_argument("--minority-frac", type=float, default=0.05)
    b.add_argument("--train-frac", type=float, default=0.7)
    b.add_argument("--runs", type=int, default=60)
    b.add_argument("--methods", default=",".join(METHODS),
                   help="comma-separated subset of " + ",".join(METHODS))
    _model_args(b)
    b.add_argument("--fixed-subsample", action="store_true",
                   help="draw the class-balanced subsample once, not per run")
    b.add_argument("--jobs", type=int, default=1, help="parallel runs (env MFL_JOBS overrides)")
    b.add_argument("--out", default=None, help="report path (stdout if omitted)")
    b.add_argument("--format", choices=("json", "csv", "markdown"), default="json")

    t = sub.add_parser("train", help="fit a forest and save the model file")
    _data_args(t)
    _model_args(t)
    t.add_argument("--minority-frac", type=float, default=None,
                   help="subsample the minority class to this share first")
    t.add_argument("--aggregation", choices=("weighted", "vote", "mean"), default="weighted")
    t.add_argument("--loss", choices=("focal", "cross_entropy", "hinge", "zero_one", "hamming"),
                   default="focal")
    t.add_argument("--out", required=True, help="model file to write")

    pr = sub.add_parser("predict", help="score a CSV with a saved model")
    pr.add_argument("--model", required=True)
    _data_args(pr)
    pr.add_argument("--threshold", type=float, default=0.5)
    pr.add_argument("--out", default=None, help="CSV of scores and labels (stdout if omitted)")

    tu = sub.add_parser("tune", help="search alpha, gamma and M on a validation fold")
    _data_args(tu)
    tu.add_argument("--budget", type=int, default=20)
    tu.add_argument("--strategy", choices=("random", "ei"), default="random")
    tu.add_argument("--metric", choices=("auc", "recall"), default="auc")
    tu.add_argument("--seed", type=int, default=0)
    tu.add_argument("--minority-frac", type=float, default=None)
    tu.add_argument("--out", default=None, help="trial log CSV")
    return parser


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_bench(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    cfg = ExperimentConfig(
        data=args.data, label_column=args.label_col, positive_label=args.positive_label,
        minority_frac=args.minority_frac, train_frac=args.train_frac, runs=args.runs,
        methods=methods, M=args.trees, alpha=args.alpha, gamma=args.gamma,
        master_seed=args.seed, output=args.out, fixed_subsample=args.fixed_subsample,
        name="synthetic" if args.synthetic else None, max_depth=args.max_depth,
        min_samples_leaf=args.min_samples_leaf, complexity_mode=args.complexity,
    )
    if args.synthetic:
        data = make_imbalanced_blobs(rng_seed=args.seed)
    elif args.data:
        data = load_csv(args.data, args.label_col, args.positive_label)
    else:
        raise ValueError("bench needs --data or --synthetic")
    report = run_benchmark(cfg, data, jobs=args.jobs)
    _emit(render_report(report, args.format), args.out)
    if report.failures:
        log.warning("%d method runs failed", len(report.failures))
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_train(args) -> int:
    data = load_csv(args.data, args.label_col, args.positive_label)
    if args.minority_frac is not None:
        data = stratified_subsample(data, args.minority_frac, args.seed)
    spec = LossSpec(args.loss, args.alpha, args.gamma)
    cfg = FitConfig(M=args.trees, tree_params=TreeParams(args.max_depth, args.min_samples_leaf),
                    loss_spec=spec, rng_seed=args.seed, complexity_mode=args.complexity)
    model = fit_forest(data, cfg, args.aggregation)
    save_model(model, args.out)
    log.info("saved %d-tree %s forest to %s", model.M, model.aggregation, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    data = load_csv(args.data, args.label_col, args.positive_label)
    if data.p != model.n_features:
        raise ValueError(f"model expects {model.n_features} features, data has {data.p} "
                         "(categorical columns must encode to the same levels)")
    scores = model.predict_proba(data.features)
    labels = predict_labels(model, data.features, args.threshold)
    rows = [["row", "score", "label"]] + [[i, repr(float(s)), int(l)]
                                          for i, (s, l) in enumerate(zip(scores, labels))]
    text = "".join(",".join(map(str, r)) + "\n" for r in rows)
    _emit(text, args.out)
    return EXIT_OK


def cmd_tune(args) -> int:
    data = load_csv(args.data, args.label_col, args.positive_label)
    if args.minority_frac is not None:
        data = stratified_subsample(data, args.minority_frac, args.seed)
    res = tune(data, SearchSpace(budget=args.budget), args.seed, args.strategy, args.metric)
    if args.out:
        res.to_csv(args.out)
    a, g, m = res.best
    print(f"best alpha={a:.4f} gamma={g:.4f} M={m} val_{args.metric}={res.best_score:.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"bench": cmd_bench, "train": cmd_train, "predict": cmd_predict, "tune": cmd_tune}
    try:
        return handlers[args.command](args)
    except (DataError, ModelFormatError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
