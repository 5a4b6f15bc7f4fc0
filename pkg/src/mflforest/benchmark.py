"""Repeated-split benchmark of the weighted forest against comparator methods."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import KNNModel, fit_iforest, fit_logistic
from .data import Dataset, load_csv, stratified_subsample, train_test_split
from .ensemble import FitConfig, ForestModel, derive_seed, grow_trees, prediction_matrix
from .loss import LossSpec
from .metrics import evaluate
from .mfl import optimize_weights, uniform_weights
from .tree import TreeParams

logger = logging.getLogger(__name__)

METHODS = ("mfl", "focal_nopenalty", "vote", "mean", "zero_one", "hamming", "hinge",
           "cross_entropy", "iforest", "knn", "logistic")
FOREST_METHODS = METHODS[:8]
METRICS = ("accuracy", "recall", "auc", "ari")

# Row labels in rendered tables
DISPLAY = {
    "mfl": "Modified Focal", "focal_nopenalty": "Focal", "vote": "Vote", "mean": "Average",
    "zero_one": "Zero One", "hamming": "Hamming", "hinge": "Hinge Loss",
    "cross_entropy": "Cross Entropy", "iforest": "Isolation Forest", "knn": "KNN",
    "logistic": "logistic",
}


@dataclass(frozen=True)
class ExperimentConfig:
    data: str | None = None
    label_column: str = "-1"
    positive_label: str = "1"
    minority_frac: float = 0.05
    train_frac: float = 0.7
    runs: int = 60
    methods: tuple = METHODS
    M: int = 20
    alpha: float = 0.95
    gamma: float = 2.0
    master_seed: int = 0
    output: str | None = None
    fixed_subsample: bool = False
    name: str | None = None
    max_depth: int | None = None
    min_samples_leaf: int = 1
    complexity_mode: str = "leaves"
    knn_k: int = 5
    iforest_trees: int = 100

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        methods = tuple(self.methods)
        if not methods:
            raise ValueError("at least one method is required")
        unknown = [m for m in methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
        object.__setattr__(self, "methods", methods)
        if self.M < 1:
            raise ValueError("M must be >= 1")
        LossSpec.focal(self.alpha, self.gamma)
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")

    @property
    def dataset_name(self) -> str:
        if self.name:
            return self.name
        return Path(self.data).stem if self.data else "dataset"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["methods"] = list(self.methods)
        d.pop("output")
        return d


@dataclass
class BenchmarkReport:
    config: dict
    version: str
    results: list
    summary: list = field(default_factory=list)

    @property
    def methods(self) -> list:
        return list(dict.fromkeys(r["method"] for r in self.results))

    @property
    def failures(self) -> list:
        return [r for r in self.results if r.get("error")]

    def means(self, metric: str) -> dict:
        return {s["method"]: s["mean"] for s in self.summary if s["metric"] == metric}

    def to_json(self) -> str:
        body = {"config": self.config, "version": self.version,
                "results": self.results, "summary": self.summary}
        return json.dumps(body, indent=2, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> BenchmarkReport:
        body = json.loads(text)
        return cls(body["config"], body["version"], body["results"], body["summary"])


def summarize(results: list) -> list:
    """Mean and sample standard deviation of each metric per method (failed runs skipped)."""
    out = []
    methods = list(dict.fromkeys(r["method"] for r in results))
    for m in methods:
        rows = [r for r in results if r["method"] == m and not r.get("error")]
        for metric in METRICS:
            vals = np.array([r[metric] for r in rows], dtype=np.float64)
            if vals.size == 0:
                mean = std = None
            else:
                mean = float(vals.mean())
                std = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
            out.append({"method": m, "metric": metric, "mean": mean, "std": std,
                        "n": int(vals.size)})
    return out


def _forest_weights(method: str, trees, train: Dataset, cfg: ExperimentConfig):
    M = len(trees)
    if method in ("vote", "mean"):
        return uniform_weights(M), method, None
    pm = prediction_matrix(trees, train, cfg.complexity_mode)
    if method in ("mfl", "focal_nopenalty"):
        spec = LossSpec.focal(cfg.alpha, cfg.gamma)
    else:
        spec = LossSpec(method)
    penalty = "none" if method == "focal_nopenalty" else "plugin"
    return optimize_weights(pm, spec, penalty=penalty), "weighted", spec


def run_once(data: Dataset, cfg: ExperimentConfig, run: int) -> list:
    """One subsample/split/fit/evaluate round for every configured method."""
    run_seed = cfg.master_seed + run
    sub_seed = derive_seed(cfg.master_seed, 0) if cfg.fixed_subsample else derive_seed(run_seed, 0)
    sub = stratified_subsample(data, cfg.minority_frac, sub_seed)
    split = train_test_split(sub, cfg.train_frac, derive_seed(run_seed, 1), stratified=True)
    train, test = split.train, split.test

    trees = None
    rows = []
    for method in cfg.methods:
        row = {"method": method, "run": run, "seed": run_seed}
        try:
            if method in FOREST_METHODS:
                if trees is None:
                    fit_cfg = FitConfig(
                        M=cfg.M,
                        tree_params=TreeParams(cfg.max_depth, cfg.min_samples_leaf),
                        rng_seed=derive_seed(run_seed, 2),
                        complexity_mode=cfg.complexity_mode,
                    )
                    trees = grow_trees(train, fit_cfg)
                w, agg, spec = _forest_weights(method, trees, train, cfg)
                model = ForestModel(tuple(trees), w, agg, spec, cfg.complexity_mode)
                scores = model.predict_proba(test.features)
            elif method == "iforest":
                model = fit_iforest(train, cfg.iforest_trees, 256, derive_seed(run_seed, 3))
                scores = model.score(test.features)
            elif method == "knn":
                scores = KNNModel.fit(train, cfg.knn_k).predict_proba(test.features)
            else:
                scores = fit_logistic(train).predict_proba(test.features)
            rep = evaluate(scores, test.labels)
            row.update(accuracy=rep.accuracy, recall=rep.recall, auc=rep.auc, ari=rep.ari)
        except Exception as exc:  # one method failing must not sink the others
            logger.warning("run %d method %s failed: %s", run, method, exc)
            row.update(accuracy=None, recall=None, auc=None, ari=None,
                       error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


def _run_star(args):
    return run_once(*args)


def resolve_jobs(jobs: int | None) -> int:
    env = os.environ.get("MFL_JOBS")
    if env:
        jobs = int(env)
    return max(1, jobs or 1)


def run_benchmark(cfg: ExperimentConfig, data: Dataset | None = None,
                  jobs: int | None = 1) -> BenchmarkReport:
    """Run every method for ``cfg.runs`` seeded rounds and aggregate the metrics.

    Round ``r`` (1-based) uses seed ``master_seed + r``. All forest methods in
    a round share the same trees and differ only in how they weight them.
    """
    if data is None:
        if cfg.data is None:
            raise ValueError("no dataset given")
        data = load_csv(cfg.data, cfg.label_column, cfg.positive_label)
    jobs = resolve_jobs(jobs)
    tasks = [(data, cfg, r) for r in range(1, cfg.runs + 1)]
    if jobs == 1:
        per_run = [run_once(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_run = list(pool.map(_run_star, tasks))
    # order by (method, run), independent of scheduling
    results = [row for m in cfg.methods for rows in per_run for row in rows if row["method"] == m]
    return BenchmarkReport(cfg.to_dict(), __version__, results, summarize(results))


# --- rendering --------------------------------------------------------------------

def render_csv(report: BenchmarkReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "run", "accuracy", "recall", "auc", "ari"])
    for r in report.results:
        w.writerow([r["method"], r["run"]] +
                   ["" if r[m] is None else repr(r[m]) for m in METRICS])
    return buf.getvalue()


def read_csv_results(text: str) -> list:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        row = {"method": rec["method"], "run": int(rec["run"])}
        for m in METRICS:
            row[m] = float(rec[m]) if rec[m] != "" else None
        if any(row[m] is None for m in METRICS):
            row["error"] = "missing"
        rows.append(row)
    return rows


def _fmt(v, digits: int) -> str:
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{digits}f}"


def render_markdown(reports, metrics=("auc", "ari"), digits: int = 4) -> str:
    """Methods x datasets grids of mean metrics, best cell per column in bold.

    ``reports`` is a single report or a mapping of dataset name to report.
    Ties for best go to the first method listed.
    """
    if isinstance(reports, BenchmarkReport):
        name = reports.config.get("name") or Path(reports.config.get("data") or "dataset").stem
        reports = {name: reports}
    names = list(reports)
    methods = list(dict.fromkeys(m for r in reports.values() for m in r.methods))
    out = []
    for metric in metrics:
        grid = {ds: reports[ds].means(metric) for ds in names}
        best = {}
        for ds in names:
            vals = [(grid[ds].get(m), i) for i, m in enumerate(methods)]
            vals = [(v, i) for v, i in vals if v is not None]
            if vals:
                top = max(v for v, _ in vals)
                best[ds] = next(i for v, i in vals if v == top)
        out.append(f"### {metric.upper()}\n")
        out.append("| Model | " + " | ".join(names) + " |")
        out.append("|---|" + "---|" * len(names))
        for i, m in enumerate(methods):
            cells = []
            for ds in names:
                s = _fmt(grid[ds].get(m), digits)
                cells.append(f"**{s}**" if best.get(ds) == i else s)
            out.append(f"| {DISPLAY.get(m, m)} | " + " | ".join(cells) + " |")
        out.append("")
    return "\n".join(out)


def render_report(report: BenchmarkReport, fmt: str, path=None) -> str:
    """Render as ``json``, ``csv`` or ``markdown``; also write to ``path`` if given."""
    if fmt == "json":
        text = report.to_json() + "\n"
    elif fmt == "csv":
        text = render_csv(report)
    elif fmt in ("markdown", "md", "markdown-table"):
        text = render_markdown(report, metrics=METRICS)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
