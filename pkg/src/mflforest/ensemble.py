"""Random forest whose trees are blended by criterion-optimal weights.

Also provides the conventional ``vote`` and ``mean`` combiners and the
binary model artifact (``save_model`` / ``load_model``).
"""

from __future__ import annotations

import io
import logging
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .loss import KINDS, LossSpec
from .mfl import PredictionMatrix, check_weights, optimize_weights, uniform_weights
from .tree import LEAF, TreeModel, TreeParams, bootstrap_sample, complexity, fit_tree

logger = logging.getLogger(__name__)

AGGREGATIONS = ("weighted", "vote", "mean")
COMPLEXITY_MODES = ("leaves", "internal")
FEATURE_SUBSETS = ("sqrt_p", "sqrt_M")

MAGIC = b"MFLF"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """The model file is truncated, corrupted or not a model file."""


class ModelVersionError(ModelFormatError):
    """The model file was written by an unsupported format version."""


def derive_seed(*keys: int) -> int:
    """Deterministic 32-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


@dataclass(frozen=True)
class FitConfig:
    """Settings for :func:`fit_mfl_forest`.

    ``penalty`` is passed through to the weight optimizer; ``"none"`` drops
    the complexity term and leaves the bare loss sum.
    """

    M: int = 20
    tree_params: TreeParams = field(default_factory=TreeParams)
    loss_spec: LossSpec = field(default_factory=LossSpec)
    rng_seed: int = 0
    complexity_mode: str = "leaves"
    init_weights: tuple | None = None
    penalty: str = "plugin"
    feature_subset: str = "sqrt_p"
    budget: int = 500
    tol: float = 1e-8

    def __post_init__(self) -> None:
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if self.complexity_mode not in COMPLEXITY_MODES:
            raise ValueError(f"complexity_mode must be one of {COMPLEXITY_MODES}")
        if self.feature_subset not in FEATURE_SUBSETS:
            raise ValueError(f"feature_subset must be one of {FEATURE_SUBSETS}")
        if self.init_weights is not None:
            check_weights(self.init_weights, self.M)


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple
    weights: np.ndarray
    aggregation: str = "weighted"
    loss_spec_used: LossSpec | None = None
    complexity_mode: str = "leaves"

    def __post_init__(self) -> None:
        trees = tuple(self.trees)
        if not trees:
            raise ValueError("a forest needs at least one tree")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        w = check_weights(self.weights, len(trees)).copy()
        if self.aggregation != "weighted" and not np.allclose(w, 1.0 / len(trees), rtol=0, atol=1e-12):
            raise ValueError(f"{self.aggregation} aggregation requires uniform weights")
        p = {t.n_features for t in trees}
        if len(p) != 1:
            raise ValueError("trees disagree on the number of features")
        w.setflags(write=False)
        object.__setattr__(self, "trees", trees)
        object.__setattr__(self, "weights", w)

    @property
    def M(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def tree_matrix(self, X) -> np.ndarray:
        """Per-tree probabilities, shape (n, M)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        return np.column_stack([t.predict_proba(X) for t in self.trees])

    def predict_proba(self, X) -> np.ndarray:
        P = self.tree_matrix(X)
        if self.aggregation == "vote":
            return (P >= 0.5).mean(axis=1)
        if self.aggregation == "mean":
            return np.clip(P @ np.full(self.M, 1.0 / self.M), 0.0, 1.0)
        return np.clip(P @ self.weights, 0.0, 1.0)

    def with_weights(self, weights, aggregation: str = "weighted",
                     loss_spec: LossSpec | None = None) -> ForestModel:
        return ForestModel(self.trees, weights, aggregation, loss_spec, self.complexity_mode)


def grow_trees(train: Dataset, cfg: FitConfig) -> list:
    """Fit ``cfg.M`` trees on bootstrap samples with per-tree derived seeds."""
    params = cfg.tree_params
    if cfg.feature_subset == "sqrt_M":
        mf = min(train.p, max(1, math.isqrt(cfg.M)))
        params = TreeParams(params.max_depth, params.min_samples_leaf, mf)
    trees = []
    for m in range(1, cfg.M + 1):
        idx = bootstrap_sample(train.n, derive_seed(cfg.rng_seed, m, 0))
        trees.append(fit_tree(train, idx, params, derive_seed(cfg.rng_seed, m, 1)))
    return trees


def prediction_matrix(trees, d: Dataset, complexity_mode: str = "leaves") -> PredictionMatrix:
    values = np.column_stack([t.predict_proba(d.features) for t in trees])
    k = [complexity(t, complexity_mode) for t in trees]
    return PredictionMatrix(values, d.labels, k)


def fit_weights(trees, train: Dataset, cfg: FitConfig) -> np.ndarray:
    pm = prediction_matrix(trees, train, cfg.complexity_mode)
    return optimize_weights(pm, cfg.loss_spec, init=cfg.init_weights, budget=cfg.budget,
                            tol=cfg.tol, penalty=cfg.penalty)


def fit_mfl_forest(train: Dataset, cfg: FitConfig = FitConfig()) -> ForestModel:
    """Grow ``cfg.M`` bootstrap trees, then weight them by minimizing the criterion.

    The criterion is evaluated on in-sample predictions over the full
    training set.
    """
    if train.n_positive in (0, train.n):
        raise ValueError("training data must contain both classes")
    trees = grow_trees(train, cfg)
    w = fit_weights(trees, train, cfg)
    logger.debug("fit_mfl_forest: M=%d, max weight %.3f", cfg.M, w.max())
    return ForestModel(tuple(trees), w, "weighted", cfg.loss_spec, cfg.complexity_mode)


def fit_forest(train: Dataset, cfg: FitConfig = FitConfig(), aggregation: str = "weighted") -> ForestModel:
    """Like :func:`fit_mfl_forest` but for any aggregation mode."""
    if aggregation == "weighted":
        return fit_mfl_forest(train, cfg)
    if train.n_positive in (0, train.n):
        raise ValueError("training data must contain both classes")
    trees = grow_trees(train, cfg)
    return ForestModel(tuple(trees), uniform_weights(cfg.M), aggregation, None, cfg.complexity_mode)


def predict_proba(fm: ForestModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict_proba takes one feature vector; use ForestModel.predict_proba for matrices")
    return float(fm.predict_proba(x[None, :])[0])


def predict_labels(fm: ForestModel, X, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return (fm.predict_proba(X) >= threshold).astype(np.int64)


# --- model artifact ----------------------------------------------------------
#
# header   : magic "MFLF", u16 version, u32 M, u32 p, u8 complexity mode,
#            u8 aggregation, u8 loss kind (255 = none), f64 alpha, f64 gamma
# trees    : M x (u32 byte length, record); a record is u32 node count and
#            then the nodes in pre-order, each u8 is_leaf followed by
#            (i32 feature, f64 threshold) or (f64 positive fraction, u32 count)
# weights  : M x f64
# trailer  : u32 CRC-32 of everything before it
# all integers and floats little-endian

_HEADER = struct.Struct("<4sHIIBBBdd")


def _encode_tree(t: TreeModel) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", t.node_count))
    for i in range(t.node_count):
        if t.feature[i] == LEAF:
            buf.write(struct.pack("<BdI", 1, t.value[i], t.n_samples[i]))
        else:
            buf.write(struct.pack("<Bid", 0, t.feature[i], t.threshold[i]))
    return buf.getvalue()


def _decode_tree(rec: bytes, p: int) -> TreeModel:
    (count,) = struct.unpack_from("<I", rec, 0)
    off = 4
    feature, threshold, value, n_samples = [], [], [], []
    for _ in range(count):
        (is_leaf,) = struct.unpack_from("<B", rec, off)
        off += 1
        if is_leaf == 1:
            v, c = struct.unpack_from("<dI", rec, off)
            off += 12
            feature.append(LEAF)
            threshold.append(0.0)
            value.append(v)
            n_samples.append(c)
        elif is_leaf == 0:
            j, thr = struct.unpack_from("<id", rec, off)
            off += 12
            if not 0 <= j < p:
                raise ModelFormatError(f"split feature {j} out of range")
            feature.append(j)
            threshold.append(thr)
            value.append(math.nan)
            n_samples.append(0)
        else:
            raise ModelFormatError("bad node tag")
    if off != len(rec):
        raise ModelFormatError("trailing bytes in tree record")
    # rebuild child links from the pre-order layout
    left = [-1] * count
    right = [-1] * count
    pending = []
    for i in range(count - 1, -1, -1):
        if feature[i] == LEAF:
            pending.append(i)
        else:
            if len(pending) < 2:
                raise ModelFormatError("malformed tree structure")
            left[i] = pending.pop()
            right[i] = pending.pop()
            pending.append(i)
    if pending != [0]:
        raise ModelFormatError("malformed tree structure")
    # internal nodes store no value; fill from children so arrays stay finite
    value_arr = np.array(value, dtype=np.float64)
    n_arr = np.array(n_samples, dtype=np.int64)
    for i in range(count - 1, -1, -1):
        if feature[i] != LEAF:
            n_arr[i] = n_arr[left[i]] + n_arr[right[i]]
            tot = n_arr[i]
            value_arr[i] = ((value_arr[left[i]] * n_arr[left[i]] + value_arr[right[i]] * n_arr[right[i]]) / tot
                            if tot else 0.0)
    return TreeModel(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=value_arr,
        n_samples=n_arr,
        n_features=p,
    )


def dumps_model(fm: ForestModel) -> bytes:
    spec = fm.loss_spec_used
    kind = 255 if spec is None else KINDS.index(spec.kind)
    alpha = 0.0 if spec is None else spec.alpha
    gamma = 0.0 if spec is None else spec.gamma
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, fm.M, fm.n_features,
                           COMPLEXITY_MODES.index(fm.complexity_mode),
                           AGGREGATIONS.index(fm.aggregation), kind, alpha, gamma))
    for t in fm.trees:
        rec = _encode_tree(t)
        buf.write(struct.pack("<I", len(rec)))
        buf.write(rec)
    buf.write(np.asarray(fm.weights, dtype="<f8").tobytes())
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def loads_model(blob: bytes) -> ForestModel:
    if len(blob) < _HEADER.size + 4 or blob[:4] != MAGIC:
        raise ModelFormatError("not an MFLF model file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"unsupported model format version {version}")
    if zlib.crc32(body) != crc:
        raise ModelFormatError("checksum mismatch; file is corrupted or truncated")
    try:
        _, _, M, p, cmode, agg, kind, alpha, gamma = _HEADER.unpack_from(body, 0)
        off = _HEADER.size
        trees = []
        for _ in range(M):
            (length,) = struct.unpack_from("<I", body, off)
            off += 4
            rec = body[off:off + length]
            if len(rec) != length:
                raise ModelFormatError("truncated tree record")
            trees.append(_decode_tree(rec, p))
            off += length
        weights = np.frombuffer(body, dtype="<f8", count=M, offset=off).astype(np.float64)
        if off + 8 * M != len(body):
            raise ModelFormatError("unexpected trailing bytes")
        spec = None if kind == 255 else LossSpec(KINDS[kind], alpha, gamma)
        return ForestModel(tuple(trees), weights, AGGREGATIONS[agg], spec, COMPLEXITY_MODES[cmode])
    except (struct.error, IndexError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model payload: {exc}") from exc


def save_model(fm: ForestModel, path) -> None:
    Path(path).write_bytes(dumps_model(fm))


def load_model(path) -> ForestModel:
    return loads_model(Path(path).read_bytes())
