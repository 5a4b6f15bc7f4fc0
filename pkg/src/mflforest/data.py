"""Datasets: CSV ingestion, one-hot encoding, stratified subsampling, splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

MAX_CATEGORIES = 1000


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix with binary labels (1 = anomaly)."""

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple

    def __post_init__(self) -> None:
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        n, p = X.shape
        if n < 1 or p < 1:
            raise DataError(f"need n >= 1 and p >= 1, got {X.shape}")
        if y.ndim != 1 or y.shape[0] != n:
            raise DataError(f"{y.shape} labels for {n} rows")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain NaN or Inf")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("labels must be 0 or 1")
        names = tuple(str(s) for s in self.feature_names)
        if len(names) != p:
            raise DataError(f"{len(names)} feature names for {p} columns")
        y = y.astype(np.int64)
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    @property
    def minority_fraction(self) -> float:
        pos = self.n_positive
        return min(pos, self.n - pos) / self.n

    def subset(self, indices) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.feature_names)


@dataclass(frozen=True)
class SplitPair:
    train: Dataset
    test: Dataset
    train_index: np.ndarray
    test_index: np.ndarray


def _parse_float(s: str):
    try:
        v = float(s)
    except ValueError:
        return None
    return v


def load_csv(path, label_column=-1, positive_label: str = "1") -> Dataset:
    """Read a headed, comma-separated file into a :class:`Dataset`.

    Columns whose every value parses as a finite float are numeric. Other
    columns are one-hot encoded, one indicator per distinct value in sorted
    order and named ``"<column>=<value>"``. A row is labelled 1 exactly when
    its label field equals ``positive_label`` (after stripping whitespace).

    Args:
        path: CSV file.
        label_column: header name, or integer position (negative counts from the end).
        positive_label: the label string that marks an anomaly.

    Raises:
        DataError: missing file, missing label column, ragged rows, empty or
            non-finite numeric fields, or a categorical column with more than
            1000 distinct values.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            rows.append([v.strip() for v in row])
    if not rows:
        raise DataError(f"{path} has a header but no data rows")

    if isinstance(label_column, str) and label_column in header:
        label_idx = header.index(label_column)
    else:
        try:
            label_idx = int(label_column)
        except ValueError:
            raise DataError(f"label column {label_column!r} not in header {header}") from None
        if not -len(header) <= label_idx < len(header):
            raise DataError(f"label column index {label_idx} out of range")
        label_idx %= len(header)

    labels = np.array([1 if r[label_idx] == str(positive_label).strip() else 0 for r in rows])
    columns = []
    names = []
    for j, name in enumerate(header):
        if j == label_idx:
            continue
        raw = [r[j] for r in rows]
        parsed = [_parse_float(v) for v in raw]
        n_numeric = sum(v is not None for v in parsed)
        if n_numeric == len(raw):
            col = np.array(parsed, dtype=np.float64)
            if not np.all(np.isfinite(col)):
                raise DataError(f"column {name!r} has non-finite values")
            columns.append(col[:, None])
            names.append(name)
            continue
        if any(v == "" for v in raw):
            raise DataError(f"column {name!r} has empty fields; missing values are not imputed")
        if n_numeric * 2 > len(raw):
            bad = next(v for v, q in zip(raw, parsed) if q is None)
            raise DataError(f"column {name!r} is numeric but has unparseable value {bad!r}")
        levels = sorted(set(raw))
        if len(levels) > MAX_CATEGORIES:
            raise DataError(
                f"column {name!r} has {len(levels)} distinct values; likely an ID column"
            )
        codes = np.searchsorted(levels, raw)
        columns.append(np.eye(len(levels))[codes])
        names.extend(f"{name}={lv}" for lv in levels)
    if not columns:
        raise DataError("no feature columns besides the label")
    return Dataset(np.hstack(columns), labels, names)


def save_csv(d: Dataset, path, label_column: str = "label") -> None:
    """Write a dataset so that ``load_csv(path, label_column, "1")`` restores it."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(d.feature_names) + [label_column])
        for row, y in zip(d.features, d.labels):
            w.writerow([repr(float(v)) for v in row] + [str(int(y))])


def stratified_subsample(d: Dataset, target_minority_frac: float, rng_seed: int) -> Dataset:
    """Downsample the minority class so its share is at most the target.

    Every majority row is kept; ``floor(t * n_maj / (1 - t))`` minority rows
    are drawn without replacement. Row order of the input is preserved. A
    dataset whose minority share is already at or below the target is
    returned unchanged.
    """
    if not 0.0 < target_minority_frac < 0.5:
        raise DataError(f"target_minority_frac must lie in (0, 0.5), got {target_minority_frac}")
    n_pos = d.n_positive
    n_neg = d.n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("stratified subsampling needs both classes")
    minority = 1 if n_pos <= n_neg else 0
    n_min, n_maj = min(n_pos, n_neg), max(n_pos, n_neg)
    if n_min / d.n <= target_minority_frac:
        return d
    # exact decimal arithmetic, so 0.05 * 190 / 0.95 gives 10 and not 9
    t = Fraction(repr(float(target_minority_frac)))
    keep = math.floor(t * n_maj / (1 - t))
    if keep < 1:
        raise DataError(
            f"target {target_minority_frac} keeps no minority rows with {n_maj} majority rows"
        )
    rng = np.random.default_rng(rng_seed)
    min_idx = np.flatnonzero(d.labels == minority)
    chosen = rng.choice(min_idx, size=keep, replace=False)
    mask = d.labels != minority
    mask[chosen] = True
    return d.subset(np.flatnonzero(mask))


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def train_test_split(d: Dataset, train_frac: float = 0.7, rng_seed: int = 0,
                     stratified: bool = True) -> SplitPair:
    """Partition rows into disjoint train and test sets.

    The train set has ``round(train_frac * n)`` rows. With ``stratified``,
    each class contributes within one row of ``train_frac`` of its size.
    Index arrays are returned sorted.
    """
    if not 0.0 < train_frac < 1.0:
        raise DataError(f"train_frac must lie in (0, 1), got {train_frac}")
    n = d.n
    n_train = _round_half_up(train_frac * n)
    rng = np.random.default_rng(rng_seed)
    if not stratified:
        perm = rng.permutation(n)
        train_idx = np.sort(perm[:n_train])
        test_idx = np.sort(perm[n_train:])
    else:
        classes = [np.flatnonzero(d.labels == c) for c in (0, 1)]
        if any(len(c) == 0 for c in classes):
            raise DataError("stratified split needs both classes")
        targets = [train_frac * len(c) for c in classes]
        counts = [_round_half_up(t) for t in targets]
        # reconcile the per-class rounding with the overall train size
        while sum(counts) > n_train:
            j = max(range(2), key=lambda c: (counts[c] - targets[c], -c))
            counts[j] -= 1
        while sum(counts) < n_train:
            j = max(range(2), key=lambda c: (targets[c] - counts[c], -c))
            counts[j] += 1
        if min(counts) < 1:
            raise DataError("stratified split leaves a class absent from train")
        parts_train, parts_test = [], []
        for idx, k in zip(classes, counts):
            perm = rng.permutation(idx)
            parts_train.append(perm[:k])
            parts_test.append(perm[k:])
        train_idx = np.sort(np.concatenate(parts_train))
        test_idx = np.sort(np.concatenate(parts_test))
    return SplitPair(d.subset(train_idx), d.subset(test_idx), train_idx, test_idx)


def make_imbalanced_blobs(n: int = 1069, minority_frac: float = 0.029, p: int = 8,
                          label_noise: float = 0.1, separation: float = 2.5,
                          rng_seed: int = 0) -> Dataset:
    """Synthetic imbalanced data: Gaussian clusters with symmetric label noise.

    Normal rows come from two unit-variance clusters and anomalies from one
    cluster shifted by ``separation`` along a random direction. Label noise
    swaps ``round(label_noise * n_pos)`` anomalies with as many normal rows,
    so the class counts, and hence the minority fraction, are unchanged.
    """
    rng = np.random.default_rng(rng_seed)
    n_pos = max(1, _round_half_up(minority_frac * n))
    n_neg = n - n_pos
    centers = rng.normal(size=(2, p))
    direction = rng.normal(size=p)
    direction /= np.linalg.norm(direction)
    which = rng.integers(0, 2, size=n_neg)
    X_neg = centers[which] + rng.normal(size=(n_neg, p))
    X_pos = centers.mean(axis=0) + separation * direction + rng.normal(size=(n_pos, p))
    X = np.vstack([X_neg, X_pos])
    y = np.r_[np.zeros(n_neg, dtype=np.int64), np.ones(n_pos, dtype=np.int64)]
    n_flip = _round_half_up(label_noise * n_pos)
    if n_flip:
        pos = rng.choice(np.flatnonzero(y == 1), size=n_flip, replace=False)
        neg = rng.choice(np.flatnonzero(y == 0), size=n_flip, replace=False)
        y[pos] = 0
        y[neg] = 1
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], [f"x{j}" for j in range(p)])
