"""Conformalized set prediction over a quantile-discretized space.

Each selected pose dimension is discretized into K quantile bins (narrow
where labels are dense), a shared trunk feeds one softmax head per
dimension, and calibration thresholds the per-class scores so the predicted
class sets carry the conformal guarantee. Because selected classes need not
be adjacent, the projected region can be a disjoint union of boxes.

Two set constructions are provided: the basic rule (classes whose softmax
exceeds 1 - q_hat) and the all-class variant ("aps") built from cumulative
sorted softmax mass, which is less brittle when softmax scores are poorly
ranked.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..conformal import csp_level, empirical_quantile
from ..data import DataSplit, PoseDataset
from ..errors import InvalidInput, TrainingDiverged, ValidationError
from ..geometry import POSE_DIMS
from ..nn import (
    Adam,
    Dense,
    Network,
    PReLU,
    Softmax,
    cross_entropy_grad,
    cross_entropy_loss,
)
from ..regions import BinUnionProduct
from ..rng import stream, substream_seeds

# Scores within this distance of the threshold count as ties and are kept.
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class Discretization:
    """Per-dimension strictly increasing bin edges built from label quantiles."""

    edges: tuple

    def __post_init__(self):
        cleaned = []
        for e in self.edges:
            e = np.asarray(e, dtype=float)
            if e.ndim != 1 or e.size < 3:
                raise InvalidInput("each dimension needs at least 2 bins")
            if np.any(np.diff(e) <= 0):
                raise InvalidInput("bin edges must be strictly increasing")
            cleaned.append(e)
        object.__setattr__(self, "edges", tuple(cleaned))

    @property
    def n_dims(self) -> int:
        return len(self.edges)

    @property
    def n_bins(self) -> tuple[int, ...]:
        return tuple(e.size - 1 for e in self.edges)

    def bin_index(self, values: np.ndarray) -> np.ndarray:
        """Bin index per value; out-of-range values clamp to the edge bins."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[1] != self.n_dims:
            raise InvalidInput(
                f"expected {self.n_dims} label columns, got {values.shape[1]}"
            )
        out = np.empty(values.shape, dtype=np.int64)
        for d, e in enumerate(self.edges):
            idx = np.searchsorted(e[1:-1], values[:, d], side="right")
            out[:, d] = idx
        return out

    def bin_bounds(self, d: int, bins) -> np.ndarray:
        """(m, 2) interval rows for the given bin indices of dimension d."""
        bins = np.asarray(bins, dtype=np.int64)
        e = self.edges[d]
        return np.stack([e[bins], e[bins + 1]], axis=1)


def build_discretization(labels: np.ndarray, n_bins: int) -> Discretization:
    """Quantile bin edges per label column; duplicate edges nudged by 1e-12."""
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    if labels.ndim != 2:
        raise InvalidInput("labels must be (n, d)")
    if n_bins < 2:
        raise InvalidInput(f"need at least 2 bins, got {n_bins}")
    edges = []
    for d in range(labels.shape[1]):
        col = labels[:, d]
        if np.unique(col).size < n_bins:
            raise ValidationError(
                f"dimension {d} has fewer than {n_bins} distinct label values"
            )
        e = np.quantile(col, np.linspace(0.0, 1.0, n_bins + 1))
        e[0] = col.min()
        e[-1] = col.max()
        for j in range(1, e.size):
            if e[j] <= e[j - 1]:
                e[j] = e[j - 1] + 1e-12
        edges.append(e)
    return Discretization(edges=tuple(edges))


@dataclass(frozen=True)
class CspConfig:
    n_bins: int = 25
    dims: tuple[int, ...] = (0, 1, 2)  # translation; orientation opt-in
    trunk_hidden: tuple[int, ...] = (48, 48)
    epochs: int = 60
    batch_size: int = 128
    learning_rate: float = 3e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValidationError("n_bins must be >= 2")
        if not self.dims or any(not 0 <= d < 6 for d in self.dims):
            raise ValidationError(f"dims must be pose dimension indices, got {self.dims}")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValidationError("bad training settings")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "trunk_hidden", tuple(int(h) for h in self.trunk_hidden))


@dataclass
class PredictionSet:
    """Per-dimension class index sets for one input."""

    indices: tuple  # one sorted int array per dimension
    fallback: np.ndarray  # per-dimension flag: empty set replaced by argmax

    def sizes(self) -> tuple[int, ...]:
        return tuple(len(ix) for ix in self.indices)

    def is_contiguous(self, d: int) -> bool:
        ix = self.indices[d]
        return ix.size <= 1 or bool(np.all(np.diff(ix) == 1))


@dataclass
class CspModel:
    trunk: Network
    heads: list[Network]
    disc: Discretization
    dims: tuple[int, ...]
    alpha: float | None = None
    qhat: np.ndarray | None = None  # basic-variant thresholds per dimension
    qhat_aps: np.ndarray | None = None
    unbounded: bool = False
    epoch_losses: list = field(default_factory=list)

    @property
    def dim_names(self) -> tuple[str, ...]:
        return tuple(POSE_DIMS[d] for d in self.dims)


def _build_networks(feature_dim: int, cfg: CspConfig, n_bins: tuple[int, ...]):
    seeds = substream_seeds(cfg.seed, 1 + len(n_bins), "csp", "nets")
    layers = []
    d_in = feature_dim
    for h in cfg.trunk_hidden:
        layers += [Dense(d_in, h), PReLU(h)]
        d_in = h
    trunk = Network(layers, in_dim=feature_dim, seed=int(seeds[0]))
    heads = [
        Network([Dense(d_in, k), Softmax()], in_dim=d_in, seed=int(seeds[1 + i]))
        for i, k in enumerate(n_bins)
    ]
    return trunk, heads


def _onehot(idx: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((idx.size, k))
    out[np.arange(idx.size), idx] = 1.0
    return out


def csp_train(
    dataset: PoseDataset, split: DataSplit, disc: Discretization, cfg: CspConfig
) -> CspModel:
    """Jointly train the shared trunk and per-dimension softmax heads."""
    if len(cfg.dims) != disc.n_dims:
        raise ValidationError("discretization does not match configured dims")
    X = dataset.features[split.train]
    bins = disc.bin_index(dataset.labels[split.train][:, list(cfg.dims)])
    targets = [_onehot(bins[:, j], k) for j, k in enumerate(disc.n_bins)]

    trunk, heads = _build_networks(dataset.dim, cfg, disc.n_bins)
    opt_trunk = Adam(trunk.params, cfg.learning_rate)
    opt_heads = [Adam(h.params, cfg.learning_rate) for h in heads]

    n = X.shape[0]
    step_seeds = iter(substream_seeds(cfg.seed, cfg.epochs * (n // cfg.batch_size + 2), "csp", "steps"))
    epoch_losses = []
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "csp", "shuffle", epoch).permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            take = order[start : start + cfg.batch_size]
            seed = int(next(step_seeds))
            h = trunk.forward(X[take], train=True, seed=seed)
            loss = 0.0
            gin_total = np.zeros_like(h)
            for j, head in enumerate(heads):
                probs = head.forward(h, train=True, seed=seed + j + 1)
                loss += cross_entropy_loss(targets[j][take], probs)
                head.backward(cross_entropy_grad(targets[j][take], probs))
                gin_total += head.last_input_grad
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            trunk.backward(gin_total)
            opt_trunk.step(trunk.grads)
            for head, opt in zip(heads, opt_heads):
                opt.step(head.grads)
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))
    return CspModel(
        trunk=trunk,
        heads=heads,
        disc=disc,
        dims=cfg.dims,
        epoch_losses=epoch_losses,
    )


def _probs(model: CspModel, X: np.ndarray) -> list[np.ndarray]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    h = model.trunk.forward(X, train=False, seed=0)
    return [head.forward(h, train=False, seed=0) for head in model.heads]


def csp_calibrate(model: CspModel, X, Y, alpha: float) -> CspModel:
    """Compute per-dimension thresholds q_hat (basic and aps variants).

    Basic scores are 1 - softmax of the true class; aps scores are the
    cumulative sorted softmax mass up to and including the true class. Both
    are thresholded at the empirical csp_level(n, alpha) quantile; the +inf
    sentinel (level > 1) degrades to q_hat = 1, admitting all classes.
    """
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha!r}")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    probs = _probs(model, X)
    true_bins = model.disc.bin_index(Y[:, list(model.dims)])
    n = Y.shape[0]
    level = csp_level(n, alpha)
    qhat = np.empty(len(model.dims))
    qhat_aps = np.empty(len(model.dims))
    unbounded = level > 1
    rows = np.arange(n)
    for j, p in enumerate(probs):
        p_true = p[rows, true_bins[:, j]]
        basic_scores = 1.0 - p_true
        order = np.argsort(-p, axis=1, kind="stable")
        sorted_p = np.take_along_axis(p, order, axis=1)
        cum = np.cumsum(sorted_p, axis=1)
        rank = np.argmax(order == true_bins[:, j][:, None], axis=1)
        aps_scores = cum[rows, rank]
        if unbounded:
            qhat[j] = 1.0
            qhat_aps[j] = 1.0
        else:
            qhat[j] = empirical_quantile(basic_scores, level)
            qhat_aps[j] = empirical_quantile(aps_scores, level)
    model.alpha = alpha
    model.qhat = qhat
    model.qhat_aps = qhat_aps
    model.unbounded = bool(unbounded)
    return model


def _require_calibrated(model: CspModel):
    if model.qhat is None:
        raise InvalidInput("model is not calibrated")


def csp_predict_mask(model: CspModel, X) -> tuple[list[np.ndarray], np.ndarray]:
    """Basic-variant boolean class masks per dimension, plus fallback flags."""
    _require_calibrated(model)
    probs = _probs(model, X)
    masks = []
    fallback = np.zeros((probs[0].shape[0], len(model.dims)), dtype=bool)
    for j, p in enumerate(probs):
        mask = p > (1.0 - model.qhat[j]) - _TIE_TOL
        empty = ~mask.any(axis=1)
        if np.any(empty):
            mask[empty, np.argmax(p[empty], axis=1)] = True
            fallback[:, j] = empty
        masks.append(mask)
    return masks, fallback


def csp_predict_mask_aps(model: CspModel, X) -> tuple[list[np.ndarray], np.ndarray]:
    """All-class ("aps") boolean masks: smallest prefix of descending softmax
    whose cumulative mass reaches q_hat; never empty."""
    _require_calibrated(model)
    probs = _probs(model, X)
    masks = []
    n = probs[0].shape[0]
    fallback = np.zeros((n, len(model.dims)), dtype=bool)
    for j, p in enumerate(probs):
        order = np.argsort(-p, axis=1, kind="stable")
        sorted_p = np.take_along_axis(p, order, axis=1)
        cum = np.cumsum(sorted_p, axis=1)
        need = np.sum(cum < model.qhat_aps[j] - _TIE_TOL, axis=1)
        need = np.minimum(need, p.shape[1] - 1)
        mask = np.zeros_like(p, dtype=bool)
        for i in range(n):
            mask[i, order[i, : need[i] + 1]] = True
        masks.append(mask)
    return masks, fallback


def _mask_to_set(masks, fallback, i) -> PredictionSet:
    return PredictionSet(
        indices=tuple(np.nonzero(m[i])[0] for m in masks),
        fallback=fallback[i].copy(),
    )


def csp_predict_set(model: CspModel, x) -> PredictionSet:
    masks, fallback = csp_predict_mask(model, np.atleast_2d(x))
    return _mask_to_set(masks, fallback, 0)


def csp_predict_set_aps(model: CspModel, x) -> PredictionSet:
    masks, fallback = csp_predict_mask_aps(model, np.atleast_2d(x))
    return _mask_to_set(masks, fallback, 0)


def set_to_region(pred_set: PredictionSet, disc: Discretization) -> BinUnionProduct:
    """Project per-dimension class sets to the union-of-boxes region."""
    intervals = []
    for d in range(disc.n_dims):
        ix = np.asarray(pred_set.indices[d], dtype=np.int64)
        if ix.size == 0:
            raise InvalidInput("prediction set has an empty dimension")
        intervals.append(disc.bin_bounds(d, ix))
    return BinUnionProduct(intervals=tuple(intervals))


def class_coverage(model: CspModel, masks, Y) -> np.ndarray:
    """Fraction of labels whose true bin is in the predicted set, per dim."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    true_bins = model.disc.bin_index(Y[:, list(model.dims)])
    rows = np.arange(Y.shape[0])
    return np.array(
        [masks[j][rows, true_bins[:, j]].mean() for j in range(len(masks))]
    )


# --- checkpoint glue ------------------------------------------------------


def csp_to_arrays(model: CspModel) -> tuple[dict, dict[str, np.ndarray]]:
    meta = {
        "kind": "csp",
        "dims": list(model.dims),
        "alpha": model.alpha,
        "unbounded": model.unbounded,
        "trunk": model.trunk.to_meta(),
        "heads": [h.to_meta() for h in model.heads],
        "edges_listed": [e.tolist() for e in model.disc.edges],
    }
    arrays = {"trunk_params": model.trunk.params}
    for j, head in enumerate(model.heads):
        arrays[f"head{j}_params"] = head.params
    for j, e in enumerate(model.disc.edges):
        arrays[f"edges{j}"] = e
    if model.qhat is not None:
        arrays["qhat"] = model.qhat
        arrays["qhat_aps"] = model.qhat_aps
    return meta, arrays


def csp_from_arrays(meta: dict, arrays: dict[str, np.ndarray]) -> CspModel:
    trunk = Network.from_meta(meta["trunk"], arrays["trunk_params"])
    heads = [
        Network.from_meta(h_meta, arrays[f"head{j}_params"])
        for j, h_meta in enumerate(meta["heads"])
    ]
    edges = tuple(arrays[f"edges{j}"] for j in range(len(meta["heads"])))
    model = CspModel(
        trunk=trunk,
        heads=heads,
        disc=Discretization(edges=edges),
        dims=tuple(meta["dims"]),
        alpha=meta["alpha"],
        unbounded=meta["unbounded"],
    )
    if "qhat" in arrays:
        model.qhat = arrays["qhat"]
        model.qhat_aps = arrays["qhat_aps"]
    return model
