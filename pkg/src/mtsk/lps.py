"""Learned pattern similarity.

Each series is cut into overlapping segments: a window of one attribute
predicts a lagged value of another.  Random regression trees (one random
feature per node, best threshold among a random sample) are grown on the
pooled segment rows of the training cohort; a series is then represented
by the histogram of its segment rows over every tree's terminal nodes,
and similarity is the histogram intersection kernel.  Missing cells are
carried as NaN markers: rows with a missing target are not used to grow
trees, and a row missing a split feature follows the child that received
more training rows.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .cohort import Cohort, MTSample
from .kernels import KernelMatrix

MIN_SEGMENT_FRACTION = 0.15
MAX_SEGMENT_FRACTION = 0.5
MAX_LAG_FRACTION = 0.2
MIN_SPLIT_ROWS = 8
N_THRESHOLD_CANDIDATES = 20


def build_segment_matrix(
    x: MTSample, segment_length: int, lag: int, v_pred: int, v_tgt: int
) -> tuple[np.ndarray, np.ndarray]:
    """Segment rows of one sample: (predict window, lagged target value).

    Returns ``(predictors, targets)`` where predictors is (S, l) and
    targets is (S,), S = T - l - p + 1; missing cells appear as NaN.
    """
    l, p = segment_length, lag
    T = x.n_days
    if l < 1 or p < 1:
        raise ValueError("segment_length and lag must be >= 1")
    if l + p > T:
        raise ValueError(f"segment_length {l} + lag {p} exceeds window {T}")
    row_pred = np.where(x.mask[v_pred] > 0, x.values[v_pred], np.nan)
    row_tgt = np.where(x.mask[v_tgt] > 0, x.values[v_tgt], np.nan)
    S = T - l - p + 1
    idx = np.arange(S)[:, None] + np.arange(l)[None, :]
    return row_pred[idx], row_tgt[np.arange(S) + l + p - 1]


@dataclass
class LPSTree:
    """One random-lag regression tree, stored as flat node arrays."""

    segment_length: int
    lag: int
    predictor_attr: int
    target_attr: int
    feature: np.ndarray       # split feature per node, -1 at leaves
    threshold: np.ndarray
    left: np.ndarray          # child node ids, -1 at leaves
    right: np.ndarray
    missing_left: np.ndarray  # bool: absent split value goes left
    leaf_slot: np.ndarray     # leaf position within this tree's block, -1 inside

    @property
    def n_leaves(self) -> int:
        return int((self.leaf_slot >= 0).sum())

    def route(self, predictors: np.ndarray) -> np.ndarray:
        """Histogram of segment rows over the terminal nodes."""
        node = np.zeros(predictors.shape[0], dtype=int)
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                break
            rows = np.flatnonzero(internal)
            at = node[rows]
            vals = predictors[rows, self.feature[at]]
            absent = np.isnan(vals)
            go_left = np.where(absent, self.missing_left[at], vals <= self.threshold[at])
            node[rows] = np.where(go_left, self.left[at], self.right[at])
        return np.bincount(self.leaf_slot[node], minlength=self.n_leaves)


@dataclass
class LPSForest:
    trees: list[LPSTree]
    window_length: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def representation_length(self) -> int:
        return sum(t.n_leaves for t in self.trees)

    def tree_offsets(self) -> list[int]:
        offsets = [0]
        for t in self.trees:
            offsets.append(offsets[-1] + t.n_leaves)
        return offsets


@dataclass
class BagRepresentation:
    """Concatenated terminal-node counts, one block per tree."""

    counts: np.ndarray
    offsets: list[int]  # block boundaries, len = n_trees + 1

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=int)
        if (self.counts < 0).any():
            raise ValueError("bag counts must be nonnegative")

    def block(self, j: int) -> np.ndarray:
        return self.counts[self.offsets[j]:self.offsets[j + 1]]


class _TreeBuilder:
    def __init__(self, rng, max_depth):
        self.rng = rng
        self.max_depth = max_depth
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.missing_left = []

    def _add_node(self):
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.missing_left.append(False)
        return len(self.feature) - 1

    def grow(self, pred: np.ndarray, tgt: np.ndarray, depth: int = 0) -> int:
        node = self._add_node()
        n = tgt.size
        if depth >= self.max_depth or n < MIN_SPLIT_ROWS:
            return node
        node_sse = float(((tgt - tgt.mean()) ** 2).sum())
        if node_sse == 0.0:
            return node
        f = int(self.rng.integers(pred.shape[1]))
        col = pred[:, f]
        observed = ~np.isnan(col)
        vals = col[observed]
        if np.unique(vals).size < 2:
            return node
        cand = np.unique(self.rng.choice(vals, size=min(N_THRESHOLD_CANDIDATES, vals.size),
                                         replace=False))
        best = None
        for theta in cand:
            go_left = col <= theta  # NaN compares False; reassigned below
            n_left_obs = int((vals <= theta).sum())
            n_right_obs = vals.size - n_left_obs
            if n_left_obs == 0 or n_right_obs == 0:
                continue
            missing_left = n_left_obs >= n_right_obs
            if missing_left:
                go_left = go_left | ~observed
            tl, tr = tgt[go_left], tgt[~go_left]
            sse = float(((tl - tl.mean()) ** 2).sum()) + float(((tr - tr.mean()) ** 2).sum())
            gain = node_sse - sse
            if gain > 0 and (best is None or gain > best[0]):
                best = (gain, theta, missing_left, go_left)
        if best is None:
            return node
        _, theta, missing_left, go_left = best
        self.feature[node] = f
        self.threshold[node] = theta
        self.missing_left[node] = missing_left
        self.left[node] = self.grow(pred[go_left], tgt[go_left], depth + 1)
        self.right[node] = self.grow(pred[~go_left], tgt[~go_left], depth + 1)
        return node

    def finish(self, segment_length, lag, v_pred, v_tgt) -> LPSTree:
        feature = np.array(self.feature, dtype=int)
        leaf_slot = np.full(feature.size, -1, dtype=int)
        leaves = np.flatnonzero(feature < 0)
        leaf_slot[leaves] = np.arange(leaves.size)
        return LPSTree(
            segment_length=segment_length,
            lag=lag,
            predictor_attr=v_pred,
            target_attr=v_tgt,
            feature=feature,
            threshold=np.array(self.threshold),
            left=np.array(self.left, dtype=int),
            right=np.array(self.right, dtype=int),
            missing_left=np.array(self.missing_left, dtype=bool),
            leaf_slot=leaf_slot,
        )


def segment_ranges(T: int) -> tuple[int, int, int]:
    """(min segment length, max segment length, max lag) for a window of T days."""
    l_min = math.ceil(MIN_SEGMENT_FRACTION * T)
    l_max = max(l_min, math.ceil(MAX_SEGMENT_FRACTION * T))
    p_max = max(1, math.ceil(MAX_LAG_FRACTION * T))
    return l_min, l_max, p_max


def lps_train(
    train: Cohort,
    n_trees: int = 200,
    max_depth: int = 6,
    seed: int = 0,
) -> LPSForest:
    """Grow the random-lag forest on pooled segment rows of the cohort."""
    if n_trees < 1:
        raise ValueError("need at least one tree")
    if len(train) < 2:
        raise ValueError("need at least 2 training samples")
    T = train.window_length
    V = train.n_attributes
    l_min, l_max, p_max = segment_ranges(T)
    if l_min + 1 > T:
        raise ValueError(f"window of {T} day(s) is too short for segment rows")

    trees = []
    for j in range(n_trees):
        rng = np.random.default_rng([seed, j])
        l = int(rng.integers(l_min, l_max + 1))
        p = int(rng.integers(1, min(p_max, T - l) + 1))
        v_pred = int(rng.integers(V))
        v_tgt = int(rng.integers(V))
        preds = []
        tgts = []
        for s in train.samples:
            a, b = build_segment_matrix(s, l, p, v_pred, v_tgt)
            preds.append(a)
            tgts.append(b)
        pred = np.vstack(preds)
        tgt = np.concatenate(tgts)
        keep = ~np.isnan(tgt)  # rows with an absent target teach nothing
        builder = _TreeBuilder(rng, max_depth)
        builder.grow(pred[keep], tgt[keep])
        trees.append(builder.finish(l, p, v_pred, v_tgt))
    return LPSForest(trees, T)


def lps_represent(forest: LPSForest, x: MTSample) -> BagRepresentation:
    """Route every segment row of a sample through every tree and count leaves."""
    blocks = []
    for t in forest.trees:
        if t.segment_length + t.lag > x.n_days:
            raise ValueError(
                f"sample {x.id!r} has a {x.n_days}-day window, too short for a tree "
                f"with segment {t.segment_length} and lag {t.lag}; use a larger window"
            )
        pred, _ = build_segment_matrix(x, t.segment_length, t.lag,
                                       t.predictor_attr, t.target_attr)
        blocks.append(t.route(pred))
    return BagRepresentation(np.concatenate(blocks), forest.tree_offsets())


def lps_kernel(h_n, h_m) -> float:
    """Histogram intersection, normalized by the total representation length."""
    a = h_n.counts if isinstance(h_n, BagRepresentation) else np.asarray(h_n)
    b = h_m.counts if isinstance(h_m, BagRepresentation) else np.asarray(h_m)
    if a.shape != b.shape:
        raise ValueError(f"representation lengths differ: {a.shape} vs {b.shape}")
    return float(np.minimum(a, b).sum() / a.size)


def lps_gram(
    forest: LPSForest, train: Cohort, test: Cohort | None = None
) -> KernelMatrix:
    """Histogram-intersection Gram of a cohort (plus optional cross-kernel)."""
    H = np.stack([lps_represent(forest, s).counts for s in train.samples]).astype(float)
    n, K = H.shape
    gram = np.empty((n, n))
    for i in range(n):
        gram[i, i:] = np.minimum(H[i][None, :], H[i:]).sum(axis=1)
    i, j = np.tril_indices(n, k=-1)
    gram[i, j] = gram[j, i]
    gram /= K
    cross = None
    if test is not None:
        Hte = np.stack([lps_represent(forest, s).counts for s in test.samples]).astype(float)
        cross = np.empty((n, Hte.shape[0]))
        for i in range(n):
            cross[i] = np.minimum(H[i][None, :], Hte).sum(axis=1)
        cross /= K
    return KernelMatrix(gram, "lps", cross)


# ---------------------------------------------------------------------------
# Serialization

_FORMAT_VERSION = 1


def save_lps_forest(forest: LPSForest, path) -> None:
    meta = {
        "version": _FORMAT_VERSION,
        "window_length": forest.window_length,
        "trees": [
            {
                "segment_length": t.segment_length,
                "lag": t.lag,
                "predictor_attr": t.predictor_attr,
                "target_attr": t.target_attr,
            }
            for t in forest.trees
        ],
    }
    arrays = {}
    for k, t in enumerate(forest.trees):
        arrays[f"t{k}_feature"] = t.feature
        arrays[f"t{k}_threshold"] = t.threshold
        arrays[f"t{k}_left"] = t.left
        arrays[f"t{k}_right"] = t.right
        arrays[f"t{k}_missing_left"] = t.missing_left
        arrays[f"t{k}_leaf_slot"] = t.leaf_slot
    np.savez_compressed(path, __meta__=json.dumps(meta, sort_keys=True), **arrays)


def load_lps_forest(path) -> LPSForest:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta["version"] != _FORMAT_VERSION:
            raise ValueError(f"unsupported LPS forest version {meta['version']}")
        trees = []
        for k, tm in enumerate(meta["trees"]):
            trees.append(
                LPSTree(
                    segment_length=tm["segment_length"],
                    lag=tm["lag"],
                    predictor_attr=tm["predictor_attr"],
                    target_attr=tm["target_attr"],
                    feature=data[f"t{k}_feature"],
                    threshold=data[f"t{k}_threshold"],
                    left=data[f"t{k}_left"],
                    right=data[f"t{k}_right"],
                    missing_left=data[f"t{k}_missing_left"],
                    leaf_slot=data[f"t{k}_leaf_slot"],
                )
            )
        return LPSForest(trees, meta["window_length"])
