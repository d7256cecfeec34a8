"""Bagged decision-tree binary classifier trained on descriptor matrices.

Each tree grows on a bootstrap resample using its own counter-based RNG
stream keyed by (seed, tree index), so training is deterministic under
any degree of parallelism. Splits minimize Gini impurity over a random
feature subset, with ties broken by lowest feature index then lowest
threshold.
"""

from __future__ import annotations

import hashlib
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from .parallel import worker_count

_MIN_GINI_DECREASE = 1e-12

MODEL_MAGIC = b"RFOR"
MODEL_VERSION = 1


class ForestError(Exception):
    """Invalid training data or model input."""


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 500
    max_depth: int = 15
    min_leaf: int = 1
    mtry: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1 when given")

    def resolve_mtry(self, feature_count: int) -> int:
        if self.mtry is None:
            return max(1, int(math.isqrt(feature_count)))
        if self.mtry > feature_count:
            raise ForestError(
                f"mtry {self.mtry} exceeds feature count {feature_count}"
            )
        return self.mtry


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat node arrays; feature -1 marks a leaf, children are node indices."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    fraction: np.ndarray
    count: np.ndarray

    def depth(self) -> int:
        depths = np.zeros(len(self.feature), dtype=np.int64)
        out = 0
        for node in range(len(self.feature)):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
            else:
                out = max(out, int(depths[node]))
        return out


@dataclass(frozen=True, eq=False)
class ForestModel:
    trees: tuple[Tree, ...]
    feature_count: int
    config: ForestConfig
    schema_hash: str
    oob_error: float | None


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    key = np.array([seed, tree_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _best_split(x_cols, feats, y_node, pos, min_leaf):
    """Best (decrease, feature, threshold) over the node's candidate features.

    x_cols holds the candidate feature columns in ascending feature order;
    returns None when no split strictly reduces Gini.
    """
    n = y_node.size
    neg = n - pos
    g_parent = 1.0 - (pos * pos + neg * neg) / (n * n)
    best = None
    for col, feat in enumerate(feats):
        v = x_cols[:, col]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ys = y_node[order]
        cut = np.flatnonzero(vs[1:] != vs[:-1])
        if cut.size == 0:
            continue
        n_l = cut + 1
        if min_leaf > 1:
            keep = (n_l >= min_leaf) & (n - n_l >= min_leaf)
            cut = cut[keep]
            n_l = n_l[keep]
            if cut.size == 0:
                continue
        p_l = np.cumsum(ys)[cut]
        q_l = n_l - p_l
        n_r = n - n_l
        p_r = pos - p_l
        q_r = n_r - p_r
        child = (
            n_l - (p_l * p_l + q_l * q_l) / n_l + n_r - (p_r * p_r + q_r * q_r) / n_r
        ) / n
        dec = g_parent - child
        j = int(np.argmax(dec))
        if dec[j] <= _MIN_GINI_DECREASE:
            continue
        if best is None or dec[j] > best[0]:
            thr = 0.5 * (vs[cut[j]] + vs[cut[j] + 1])
            best = (float(dec[j]), int(feat), float(thr))
    return best


def _grow_tree(x, y, cfg: ForestConfig, mtry: int, rng) -> tuple[Tree, np.ndarray]:
    n_total, d = x.shape
    boot = rng.integers(0, n_total, n_total)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    fraction: list[float] = []
    count: list[int] = []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        fraction.append(0.0)
        count.append(0)
        return len(feature) - 1

    def grow(idx, depth):
        node = new_node()
        n = idx.size
        pos = int(y[idx].sum())
        count[node] = n
        fraction[node] = pos / n
        if depth >= cfg.max_depth or pos == 0 or pos == n or n < 2 * cfg.min_leaf:
            return node
        feats = np.sort(rng.choice(d, size=mtry, replace=False))
        best = _best_split(x[idx][:, feats], feats, y[idx], pos, cfg.min_leaf)
        if best is None:
            return node
        _, feat, thr = best
        go_left = x[idx, feat] <= thr
        feature[node] = feat
        threshold[node] = thr
        left[node] = grow(idx[go_left], depth + 1)
        right[node] = grow(idx[~go_left], depth + 1)
        return node

    grow(boot, 0)
    return Tree(
        np.array(feature, dtype=np.int32),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int32),
        np.array(right, dtype=np.int32),
        np.array(fraction, dtype=np.float64),
        np.array(count, dtype=np.uint32),
    ), boot


_POOL_STATE: dict = {}


def _pool_init(x, y, cfg, mtry):
    _POOL_STATE["args"] = (x, y, cfg, mtry)


def _pool_grow(tree_index: int):
    x, y, cfg, mtry = _POOL_STATE["args"]
    return _grow_tree(x, y, cfg, mtry, _tree_rng(cfg.seed, tree_index))


def rf_train(
    matrix,
    labels,
    config: ForestConfig = ForestConfig(),
    *,
    schema: Sequence[str] | None = None,
    workers: int | None = None,
) -> ForestModel:
    """Train the forest; deterministic given (matrix, labels, config)."""
    x = np.ascontiguousarray(matrix, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise ForestError(f"matrix must be non-empty 2-D, got shape {x.shape}")
    if y.shape != (x.shape[0],):
        raise ForestError("labels length does not match matrix rows")
    if not np.all((y == 0) | (y == 1)):
        raise ForestError("labels must be 0/1")
    if x.shape[0] < 2 or y.min() == y.max():
        raise ForestError("training set must contain both classes")
    if not np.all(np.isfinite(x)):
        raise ForestError("non-finite feature value in training matrix")
    mtry = config.resolve_mtry(x.shape[1])

    n_workers = worker_count(workers)
    if n_workers > 1 and config.tree_count > 1:
        chunk = max(1, config.tree_count // (4 * n_workers))
        with ProcessPoolExecutor(
            max_workers=n_workers, initializer=_pool_init, initargs=(x, y, config, mtry)
        ) as pool:
            grown = list(pool.map(_pool_grow, range(config.tree_count), chunksize=chunk))
    else:
        grown = [
            _grow_tree(x, y, config, mtry, _tree_rng(config.seed, t))
            for t in range(config.tree_count)
        ]

    trees = tuple(tree for tree, _ in grown)
    oob_sum = np.zeros(x.shape[0])
    oob_cnt = np.zeros(x.shape[0], dtype=np.int64)
    for tree, boot in grown:
        mask = np.ones(x.shape[0], dtype=bool)
        mask[boot] = False
        if mask.any():
            rows = np.flatnonzero(mask)
            oob_sum[rows] += _tree_fractions(tree, x[rows])
            oob_cnt[rows] += 1
    covered = oob_cnt > 0
    if covered.any():
        pred = (oob_sum[covered] / oob_cnt[covered]) >= 0.5
        oob_error = float(np.mean(pred != (y[covered] == 1)))
    else:
        oob_error = None

    digest = hashlib.sha256("\n".join(schema or ()).encode("utf-8")).hexdigest()
    return ForestModel(trees, x.shape[1], config, digest, oob_error)


def _tree_fractions(tree: Tree, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0])
    stack = [(0, np.arange(x.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if rows.size == 0:
            continue
        feat = tree.feature[node]
        if feat < 0:
            out[rows] = tree.fraction[node]
        else:
            go_left = x[rows, feat] <= tree.threshold[node]
            stack.append((int(tree.left[node]), rows[go_left]))
            stack.append((int(tree.right[node]), rows[~go_left]))
    return out


def rf_predict_proba_batch(model: ForestModel, matrix) -> np.ndarray:
    """Positive-class probability per row: mean of reached leaf fractions."""
    x = np.ascontiguousarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.feature_count:
        raise ForestError(
            f"matrix shape {x.shape} does not match feature count {model.feature_count}"
        )
    if not np.all(np.isfinite(x)):
        raise ForestError("non-finite feature value in prediction input")
    acc = np.zeros(x.shape[0])
    for tree in model.trees:
        acc += _tree_fractions(tree, x)
    return acc / len(model.trees)


def rf_predict_proba(model: ForestModel, row) -> float:
    """Probability of the positive class for one feature row."""
    r = np.asarray(row, dtype=np.float64).ravel()
    if r.size != model.feature_count:
        raise ForestError(
            f"row length {r.size} does not match feature count {model.feature_count}"
        )
    return float(rf_predict_proba_batch(model, r[None, :])[0])


def rf_predict(model: ForestModel, matrix) -> np.ndarray:
    """Class decisions at the fixed 0.5 vote threshold."""
    return (rf_predict_proba_batch(model, matrix) >= 0.5).astype(np.int64)


def write_model(model: ForestModel, destination: BinaryIO) -> None:
    """Versioned little-endian model file; byte-identical for equal models."""
    cfg = model.config
    destination.write(MODEL_MAGIC)
    destination.write(
        struct.pack(
            "<IIIIIIq",
            MODEL_VERSION,
            model.feature_count,
            cfg.tree_count,
            cfg.max_depth,
            cfg.min_leaf,
            0 if cfg.mtry is None else cfg.mtry,
            cfg.seed,
        )
    )
    digest = model.schema_hash.encode("ascii")
    destination.write(struct.pack("<H", len(digest)))
    destination.write(digest)
    destination.write(
        struct.pack("<d", math.nan if model.oob_error is None else model.oob_error)
    )
    for tree in model.trees:
        destination.write(struct.pack("<I", len(tree.feature)))
        destination.write(tree.feature.astype("<i4").tobytes())
        destination.write(tree.threshold.astype("<f8").tobytes())
        destination.write(tree.left.astype("<i4").tobytes())
        destination.write(tree.right.astype("<i4").tobytes())
        destination.write(tree.fraction.astype("<f8").tobytes())
        destination.write(tree.count.astype("<u4").tobytes())


def read_model(source: BinaryIO) -> ForestModel:
    magic = source.read(4)
    if magic != MODEL_MAGIC:
        raise ForestError(f"bad model magic {magic!r}")
    version, feature_count, tree_count, max_depth, min_leaf, mtry, seed = struct.unpack(
        "<IIIIIIq", source.read(32)
    )
    if version != MODEL_VERSION:
        raise ForestError(f"unsupported model version {version}")
    (hash_len,) = struct.unpack("<H", source.read(2))
    schema_hash = source.read(hash_len).decode("ascii")
    (oob,) = struct.unpack("<d", source.read(8))
    config = ForestConfig(
        tree_count=tree_count,
        max_depth=max_depth,
        min_leaf=min_leaf,
        mtry=mtry or None,
        seed=seed,
    )
    trees = []
    for _ in range(tree_count):
        (n_nodes,) = struct.unpack("<I", source.read(4))
        feature = np.frombuffer(source.read(4 * n_nodes), dtype="<i4")
        threshold = np.frombuffer(source.read(8 * n_nodes), dtype="<f8")
        left = np.frombuffer(source.read(4 * n_nodes), dtype="<i4")
        right = np.frombuffer(source.read(4 * n_nodes), dtype="<i4")
        fraction = np.frombuffer(source.read(8 * n_nodes), dtype="<f8")
        count = np.frombuffer(source.read(4 * n_nodes), dtype="<u4")
        trees.append(Tree(feature, threshold, left, right, fraction, count))
    return ForestModel(
        tuple(trees),
        feature_count,
        config,
        schema_hash,
        None if math.isnan(oob) else oob,
    )
