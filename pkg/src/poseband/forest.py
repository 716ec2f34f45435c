"""Quantile regression forest with leaf-pooled weighted quantiles.

Trees are grown on bootstrap resamples with variance-minimizing splits over
a random feature subset per node. Leaves store the (bootstrap) training
indices they contain; prediction pools the leaf targets reached by a query
across trees, giving each tree equal weight spread uniformly over its leaf,
and reads off weighted empirical quantiles with the convention "lowest
value whose cumulative weight >= level". That matches the order-statistic
convention in :mod:`poseband.conformal`, which the conformal guarantees
depend on.

Per-tree seeds are derived from the forest seed, so fitting is deterministic
and would remain identical under any parallel schedule.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInput, ValidationError
from .rng import stream, substream_seeds


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int | None = None  # None = unlimited; 0 = root leaves
    min_leaf: int = 5
    feature_fraction: float | None = None  # None -> sqrt(d)/d
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValidationError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.min_leaf < 1:
            raise ValidationError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValidationError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.feature_fraction is not None and not 0.0 < self.feature_fraction <= 1.0:
            raise ValidationError(
                f"feature_fraction must lie in (0, 1], got {self.feature_fraction}"
            )


@dataclass
class Tree:
    """Array-encoded binary tree; leaves index into ``leaf_items``."""

    feature: np.ndarray  # (n_nodes,) int32, -1 at leaves
    threshold: np.ndarray  # (n_nodes,) float64
    left: np.ndarray  # (n_nodes,) int32, -1 at leaves
    right: np.ndarray  # (n_nodes,) int32, -1 at leaves
    leaf_start: np.ndarray  # (n_nodes,) int32, -1 at internal nodes
    leaf_count: np.ndarray  # (n_nodes,) int32, 0 at internal nodes
    leaf_items: np.ndarray  # (n_items,) int32 training indices, multiplicity kept


@dataclass
class Forest:
    trees: list[Tree]
    y: np.ndarray
    n_features: int
    config: ForestConfig


def _n_split_features(d: int, cfg: ForestConfig) -> int:
    frac = cfg.feature_fraction if cfg.feature_fraction is not None else np.sqrt(d) / d
    return max(1, min(d, int(round(frac * d))))


def _best_split(X, y, idx, feats, min_leaf):
    """Best (feature, threshold) minimizing summed child SSE, or None."""
    m = idx.size
    best_cost = np.inf
    best = None
    for f in feats:
        xv = X[idx, f]
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        ys = y[idx[order]]
        c1 = np.cumsum(ys)
        c2 = np.cumsum(ys * ys)
        ks = np.arange(min_leaf, m - min_leaf + 1)
        if ks.size == 0:
            continue
        valid = xs[ks - 1] < xs[ks]
        if not np.any(valid):
            continue
        ks = ks[valid]
        s1 = c1[ks - 1]
        s2 = c2[ks - 1]
        sse_left = s2 - s1 * s1 / ks
        sse_right = (c2[-1] - s2) - (c1[-1] - s1) ** 2 / (m - ks)
        cost = sse_left + sse_right
        j = int(np.argmin(cost))
        if cost[j] < best_cost:
            k = int(ks[j])
            best_cost = float(cost[j])
            best = (int(f), 0.5 * (xs[k - 1] + xs[k]), order[:k], order[k:])
    return best


def _grow_tree(X, y, sample_idx, cfg, rng) -> Tree:
    n_feat = _n_split_features(X.shape[1], cfg)
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    leaf_start: list[int] = []
    leaf_count: list[int] = []
    leaf_items: list[np.ndarray] = []
    n_items = 0

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        leaf_start.append(-1)
        leaf_count.append(0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, sample_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        yv = y[idx]
        depth_ok = cfg.max_depth is None or depth < cfg.max_depth
        split = None
        if depth_ok and idx.size >= 2 * cfg.min_leaf and yv.max() > yv.min():
            feats = rng.choice(X.shape[1], size=n_feat, replace=False)
            split = _best_split(X, y, idx, feats, cfg.min_leaf)
        if split is None:
            leaf_start[node] = n_items
            leaf_count[node] = idx.size
            leaf_items.append(idx.astype(np.int32))
            n_items += idx.size
            continue
        f, thr, order_l, order_r = split
        feature[node] = f
        threshold[node] = thr
        child_l = new_node()
        child_r = new_node()
        left[node] = child_l
        right[node] = child_r
        # Push right first so the left child is processed (and numbered) in
        # depth-first order, keeping growth independent of stack internals.
        stack.append((child_r, idx[order_r], depth + 1))
        stack.append((child_l, idx[order_l], depth + 1))
    return Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        leaf_start=np.asarray(leaf_start, dtype=np.int32),
        leaf_count=np.asarray(leaf_count, dtype=np.int32),
        leaf_items=(
            np.concatenate(leaf_items)
            if leaf_items
            else np.empty(0, dtype=np.int32)
        ),
    )


def fit_forest(X, y, cfg: ForestConfig) -> Forest:
    """Fit a quantile regression forest; deterministic given ``cfg.seed``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise InvalidInput("X must be a 2-D matrix")
    if y.shape != (X.shape[0],):
        raise InvalidInput(f"y must have shape ({X.shape[0]},), got {y.shape}")
    if X.shape[0] < 2 * cfg.min_leaf:
        raise ValidationError(
            f"need at least {2 * cfg.min_leaf} samples, got {X.shape[0]}"
        )
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise InvalidInput("X and y must be finite")
    n = X.shape[0]
    seeds = substream_seeds(cfg.seed, cfg.n_trees, "forest")
    trees = []
    for t in range(cfg.n_trees):
        rng = stream(int(seeds[t]), "tree")
        if cfg.bootstrap:
            sample_idx = np.sort(rng.integers(0, n, size=n)).astype(np.int64)
        else:
            sample_idx = np.arange(n, dtype=np.int64)
        trees.append(_grow_tree(X, y, sample_idx, cfg, rng))
    return Forest(trees=trees, y=y.copy(), n_features=X.shape[1], config=cfg)


def _apply(tree: Tree, X: np.ndarray) -> np.ndarray:
    """Leaf node id for every row of X (vectorized descent)."""
    node = np.zeros(X.shape[0], dtype=np.int64)
    while True:
        feat = tree.feature[node]
        active = feat >= 0
        if not np.any(active):
            return node
        rows = np.nonzero(active)[0]
        f = feat[rows]
        go_left = X[rows, f] <= tree.threshold[node[rows]]
        node[rows] = np.where(
            go_left, tree.left[node[rows]], tree.right[node[rows]]
        )


def weighted_quantile(values, weights, levels) -> np.ndarray:
    """Weighted empirical quantiles: lowest value with cum. weight >= level.

    Values are sorted (stable) and weights accumulated in that order; each
    requested level in (0, 1] maps to the first value whose cumulative
    weight reaches level * total_weight.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise InvalidInput("values must be a non-empty one-dimensional array")
    if weights.shape != values.shape:
        raise InvalidInput("weights must match values")
    if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
        raise InvalidInput("weights must be positive and finite")
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    if np.any((levels <= 0) | (levels > 1)):
        raise InvalidInput(f"levels must lie in (0, 1], got {levels}")
    order = np.argsort(values, kind="stable")
    vs = values[order]
    cw = np.cumsum(weights[order])
    total = cw[-1]
    idx = np.searchsorted(cw, levels * total, side="left")
    return vs[np.minimum(idx, vs.size - 1)]


def _weight_matrix(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Meinshausen weights over training indices for each query row."""
    n_train = forest.y.size
    W = np.zeros((X.shape[0], n_train))
    t_weight = 1.0 / len(forest.trees)
    for tree in forest.trees:
        leaf_ids = _apply(tree, X)
        for leaf in np.unique(leaf_ids):
            rows = np.nonzero(leaf_ids == leaf)[0]
            start = tree.leaf_start[leaf]
            count = tree.leaf_count[leaf]
            items = tree.leaf_items[start : start + count]
            uniq, mult = np.unique(items, return_counts=True)
            W[np.ix_(rows, uniq)] += (t_weight / count) * mult
    return W


def predict_quantiles_batch(forest: Forest, X, levels) -> np.ndarray:
    """Quantile predictions for a batch; shape (n_rows, n_levels)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise InvalidInput(
            f"X must have shape (n, {forest.n_features}), got {X.shape}"
        )
    if not forest.trees:
        raise InvalidInput("empty forest")
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    if np.any((levels <= 0) | (levels > 1)):
        raise InvalidInput(f"levels must lie in (0, 1], got {levels}")
    W = _weight_matrix(forest, X)
    order = np.argsort(forest.y, kind="stable")
    ys = forest.y[order]
    cw = np.cumsum(W[:, order], axis=1)
    totals = cw[:, -1:]
    out = np.empty((X.shape[0], levels.size))
    for j, level in enumerate(levels):
        target = level * totals
        idx = np.sum(cw < target, axis=1)
        out[:, j] = ys[np.minimum(idx, ys.size - 1)]
    return out


def predict_quantiles(forest: Forest, x, levels) -> np.ndarray:
    """Quantile predictions for one query point; shape (n_levels,)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidInput("x must be a one-dimensional feature vector")
    return predict_quantiles_batch(forest, x[None, :], levels)[0]


# --- checkpoint glue ------------------------------------------------------

_TREE_FIELDS = ("feature", "threshold", "left", "right", "leaf_start", "leaf_count", "leaf_items")


def forest_to_arrays(forest: Forest) -> tuple[dict, dict[str, np.ndarray]]:
    arrays: dict[str, np.ndarray] = {"y": forest.y}
    for name in _TREE_FIELDS:
        parts = [getattr(tree, name) for tree in forest.trees]
        arrays[name] = np.concatenate(parts) if parts else np.empty(0)
        arrays[name + "_offsets"] = np.cumsum(
            [0] + [p.size for p in parts]
        ).astype(np.int64)
    cfg = forest.config
    meta = {
        "n_features": forest.n_features,
        "n_trees": cfg.n_trees,
        "config": {
            "n_trees": cfg.n_trees,
            "max_depth": cfg.max_depth,
            "min_leaf": cfg.min_leaf,
            "feature_fraction": cfg.feature_fraction,
            "bootstrap": cfg.bootstrap,
            "seed": cfg.seed,
        },
    }
    return meta, arrays


def forest_from_arrays(meta: dict, arrays: dict[str, np.ndarray]) -> Forest:
    cfg = ForestConfig(**meta["config"])
    trees = []
    for t in range(meta["n_trees"]):
        fields = {}
        for name in _TREE_FIELDS:
            off = arrays[name + "_offsets"]
            fields[name] = arrays[name][off[t] : off[t + 1]]
        trees.append(Tree(**fields))
    return Forest(
        trees=trees, y=arrays["y"], n_features=meta["n_features"], config=cfg
    )
