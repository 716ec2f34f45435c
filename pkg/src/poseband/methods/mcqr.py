"""Multivariate quantile region from a conditional VAE with MC-dropout data.

Pipeline: a point predictor with dropout layers supplies pseudo-labels via
stochastic forward passes (data augmentation); a conditional VAE encoder
(features + label -> 3-D Gaussian latent) and decoder (latent + features ->
pose) learn the label distribution; a fixed low-discrepancy grid of latent
points decodes to per-input center poses. The nonconformity score is the
minimum Euclidean distance from a label to the decoded centers, and the
calibrated region is the union of balls of radius q_hat around them.

By construction, membership in the region is *identical* to score <= q_hat,
which is what gives the region exact split-conformal validity. The
directional-quantile machinery this stands in for is intentionally not
reproduced; the latent grid keeps the architecture (latent region pushed
through the decoder) while staying provably valid at desk scale.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.stats import qmc

from ..conformal import CalibrationRecord, calibrate, cqr_level
from ..data import DataSplit, PoseDataset
from ..errors import InvalidInput, TrainingDiverged, ValidationError
from ..nn import Adam, Dense, Dropout, GaussianLatent, Network, PReLU, kl_grads, kl_loss, mse_grad, mse_loss
from ..regions import BallUnion
from ..rng import stream, substream_seeds


def default_grid_radius(dim: int, mass: float = 0.9) -> float:
    """Radius of the ball holding ``mass`` of a standard normal in ``dim`` D."""
    return float(np.sqrt(stats.chi2.ppf(mass, df=dim)))


@dataclass(frozen=True)
class LatentGrid:
    """Deterministic low-discrepancy points filling a latent ball."""

    points: np.ndarray
    radius: float
    seed: int

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        norms = np.linalg.norm(points, axis=1)
        if np.any(norms > self.radius * (1 + 1e-9)):
            raise InvalidInput("grid points must lie within the stated radius")
        object.__setattr__(self, "points", points)

    @property
    def m(self) -> int:
        return int(self.points.shape[0])

    @classmethod
    def build(cls, m: int, dim: int, radius: float | None = None, seed: int = 0) -> "LatentGrid":
        """Scrambled-Halton points mapped into the ball of ``radius``.

        Coordinate 0 gives the radius via R * u^(1/dim); the remaining
        ``dim`` coordinates pass through the normal quantile function and
        normalize to a direction, i.e. the uniform-in-ball transform applied
        to a low-discrepancy sequence. Deterministic given (m, dim, radius,
        seed).
        """
        if m < 1:
            raise InvalidInput("grid needs at least one point")
        if radius is None:
            radius = default_grid_radius(dim)
        sampler = qmc.Halton(d=dim + 1, scramble=True, seed=int(seed) & (2**32 - 1))
        u = sampler.random(m)
        r = radius * u[:, 0] ** (1.0 / dim)
        normals = stats.norm.ppf(np.clip(u[:, 1:], 1e-12, 1 - 1e-12))
        direction = normals / np.linalg.norm(normals, axis=1, keepdims=True)
        return cls(points=direction * r[:, None], radius=float(radius), seed=int(seed))


@dataclass(frozen=True)
class McqrConfig:
    latent_dim: int = 3
    n_grid: int = 64
    grid_radius: float | None = None
    mc_passes: int = 10  # T
    mc_rate: float = 0.3
    point_hidden: tuple[int, ...] = (48, 48)
    point_dropout: float = 0.2
    point_epochs: int = 40
    cvae_hidden: tuple[int, ...] = (48, 48)
    cvae_epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 3e-3
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValidationError("latent_dim must be >= 1")
        if self.mc_passes < 1:
            raise ValidationError("mc_passes must be >= 1")
        if not 0.0 <= self.mc_rate < 1.0:
            raise ValidationError("mc_rate must lie in [0, 1)")
        if self.n_grid < 1:
            raise ValidationError("n_grid must be >= 1")


@dataclass
class Cvae:
    """Encoder (features + label -> latent) and decoder (latent + features -> pose)."""

    encoder: Network
    decoder: Network
    latent_dim: int
    feature_dim: int
    label_dim: int = 6


def build_point_net(feature_dim: int, cfg: McqrConfig, out_dim: int = 6) -> Network:
    layers = []
    d = feature_dim
    for h in cfg.point_hidden:
        layers += [Dense(d, h), PReLU(h), Dropout(cfg.point_dropout)]
        d = h
    layers.append(Dense(d, out_dim))
    seed = int(substream_seeds(cfg.seed, 1, "mcqr", "pointnet")[0])
    return Network(layers, in_dim=feature_dim, seed=seed)


def train_point_net(net: Network, X, Y, cfg: McqrConfig) -> Network:
    """MSE training of the dropout point predictor (augmentation source)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    opt = Adam(net.params, cfg.learning_rate)
    n = X.shape[0]
    step_seeds = iter(
        substream_seeds(cfg.seed, cfg.point_epochs * (n // cfg.batch_size + 2), "mcqr", "point-steps")
    )
    for epoch in range(cfg.point_epochs):
        order = stream(cfg.seed, "mcqr", "point-shuffle", epoch).permutation(n)
        for start in range(0, n, cfg.batch_size):
            take = order[start : start + cfg.batch_size]
            seed = int(next(step_seeds))
            pred = net.forward(X[take], train=True, seed=seed)
            loss = mse_loss(Y[take], pred)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"point net diverged at epoch {epoch}")
            net.backward(mse_grad(Y[take], pred))
            opt.step(net.grads)
    return net


def mc_dropout_augment(net: Network, X, Y, T: int, rate: float, seed: int):
    """Augment (X, Y) with T stochastic-forward pseudo-labels per input.

    ``rate`` overrides the dropout rate of every dropout layer for the
    stochastic passes (restored afterwards). Output stacks the originals
    first, then one block per pass: N * (T + 1) samples in total.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if T < 1:
        raise InvalidInput("T must be >= 1")
    if not 0.0 <= float(rate) < 1.0:
        raise InvalidInput("rate must lie in [0, 1)")
    dropouts = [l for l in net.layers if isinstance(l, Dropout)]
    if not dropouts:
        raise InvalidInput("predictor has no dropout layers")
    saved = [l.rate for l in dropouts]
    pass_seeds = substream_seeds(seed, T, "mc-passes")
    try:
        for l in dropouts:
            l.rate = float(rate)
        blocks = [
            net.forward(X, train=True, seed=int(pass_seeds[t])) for t in range(T)
        ]
    finally:
        for l, r in zip(dropouts, saved):
            l.rate = r
    X_aug = np.vstack([X] + [X] * T)
    Y_aug = np.vstack([Y] + blocks)
    return X_aug, Y_aug


def build_cvae(feature_dim: int, cfg: McqrConfig, label_dim: int = 6) -> Cvae:
    seeds = substream_seeds(cfg.seed, 2, "mcqr", "cvae")
    enc_layers = []
    d = feature_dim + label_dim
    for h in cfg.cvae_hidden:
        enc_layers += [Dense(d, h), PReLU(h)]
        d = h
    enc_layers += [Dense(d, 2 * cfg.latent_dim), GaussianLatent(cfg.latent_dim)]
    encoder = Network(enc_layers, in_dim=feature_dim + label_dim, seed=int(seeds[0]))
    dec_layers = []
    d = cfg.latent_dim + feature_dim
    for h in cfg.cvae_hidden:
        dec_layers += [Dense(d, h), PReLU(h)]
        d = h
    dec_layers.append(Dense(d, label_dim))
    decoder = Network(dec_layers, in_dim=cfg.latent_dim + feature_dim, seed=int(seeds[1]))
    return Cvae(
        encoder=encoder,
        decoder=decoder,
        latent_dim=cfg.latent_dim,
        feature_dim=feature_dim,
        label_dim=label_dim,
    )


def cvae_train(X, Y, cfg: McqrConfig) -> tuple[Cvae, list[dict]]:
    """Train the CVAE with reconstruction MSE + KL; returns per-epoch terms."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    cvae = build_cvae(X.shape[1], cfg, Y.shape[1])
    opt_enc = Adam(cvae.encoder.params, cfg.learning_rate)
    opt_dec = Adam(cvae.decoder.params, cfg.learning_rate)
    n = X.shape[0]
    step_seeds = iter(
        substream_seeds(cfg.seed, cfg.cvae_epochs * (n // cfg.batch_size + 2), "mcqr", "cvae-steps")
    )
    log = []
    for epoch in range(cfg.cvae_epochs):
        order = stream(cfg.seed, "mcqr", "cvae-shuffle", epoch).permutation(n)
        recon_terms, kl_terms = [], []
        for start in range(0, n, cfg.batch_size):
            take = order[start : start + cfg.batch_size]
            seed = int(next(step_seeds))
            Xb, Yb = X[take], Y[take]
            z = cvae.encoder.forward(np.hstack([Xb, Yb]), train=True, seed=seed)
            y_hat = cvae.decoder.forward(np.hstack([z, Xb]), train=True, seed=seed)
            recon = mse_loss(Yb, y_hat)
            kl = kl_loss(cvae.encoder.latent_mu, cvae.encoder.latent_logvar)
            if not (math.isfinite(recon) and math.isfinite(kl)):
                raise TrainingDiverged(f"cvae diverged at epoch {epoch}")
            cvae.decoder.backward(mse_grad(Yb, y_hat))
            dz = cvae.decoder.last_input_grad[:, : cvae.latent_dim]
            d_mu, d_logvar = kl_grads(cvae.encoder.latent_mu, cvae.encoder.latent_logvar)
            cvae.encoder.backward(dz, latent_grad=(d_mu, d_logvar))
            opt_enc.step(cvae.encoder.grads)
            opt_dec.step(cvae.decoder.grads)
            recon_terms.append(recon)
            kl_terms.append(kl)
        log.append(
            {
                "epoch": epoch,
                "recon": float(np.mean(recon_terms)),
                "kl": float(np.mean(kl_terms)),
            }
        )
    return cvae, log


def decode_grid(cvae: Cvae, grid: LatentGrid, X: np.ndarray) -> np.ndarray:
    """Centers decode(z_j, x): shape (n, m_grid, label_dim)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, m = X.shape[0], grid.m
    Z = np.repeat(grid.points[None, :, :], n, axis=0).reshape(n * m, -1)
    Xr = np.repeat(X, m, axis=0)
    out = cvae.decoder.forward(np.hstack([Z, Xr]), train=False, seed=0)
    return out.reshape(n, m, cvae.label_dim)


def mcqr_score(cvae: Cvae, grid: LatentGrid, X, Y) -> np.ndarray:
    """Nonconformity: min over grid points of || decode(z_j, x) - y ||_2."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    centers = decode_grid(cvae, grid, X)
    diffs = centers - Y[:, None, :]
    return np.sqrt(np.sum(diffs**2, axis=2)).min(axis=1)


def mcqr_calibrate(cvae: Cvae, grid: LatentGrid, X, Y, alpha: float) -> CalibrationRecord:
    """q_hat = empirical (1-alpha)(1+1/n) quantile of the scores (>= 0)."""
    scores = mcqr_score(cvae, grid, X, Y)
    return calibrate(scores, alpha, cqr_level)


def mcqr_region(cvae: Cvae, grid: LatentGrid, x, q_hat: float) -> BallUnion:
    """Union of q_hat-balls around the decoded centers for one input."""
    if not math.isfinite(q_hat):
        raise InvalidInput("unbounded correction: no finite region")
    centers = decode_grid(cvae, grid, np.atleast_2d(x))[0]
    return BallUnion(centers=centers, radius=float(q_hat))


@dataclass
class McqrModel:
    cvae: Cvae
    grid: LatentGrid
    point_net: Network | None
    record: CalibrationRecord | None
    alpha: float | None
    config: McqrConfig

    @property
    def q_hat(self) -> float:
        if self.record is None:
            raise InvalidInput("model is not calibrated")
        return self.record.correction


def mcqr_fit(dataset: PoseDataset, split: DataSplit, alpha: float, cfg: McqrConfig) -> McqrModel:
    """Full pipeline: point net -> augmentation -> CVAE -> calibration."""
    X_train = dataset.features[split.train]
    Y_train = dataset.labels[split.train]
    point = build_point_net(dataset.dim, cfg)
    train_point_net(point, X_train, Y_train, cfg)
    aug_seed = int(substream_seeds(cfg.seed, 1, "mcqr", "augment")[0])
    X_aug, Y_aug = mc_dropout_augment(
        point, X_train, Y_train, cfg.mc_passes, cfg.mc_rate, aug_seed
    )
    cvae, _ = cvae_train(X_aug, Y_aug, cfg)
    grid_seed = int(substream_seeds(cfg.seed, 1, "mcqr", "grid")[0])
    grid = LatentGrid.build(cfg.n_grid, cfg.latent_dim, cfg.grid_radius, grid_seed)
    record = mcqr_calibrate(
        cvae, grid, dataset.features[split.cal], dataset.labels[split.cal], alpha
    )
    return McqrModel(
        cvae=cvae, grid=grid, point_net=point, record=record, alpha=float(alpha), config=cfg
    )


def mcqr_contains(model: McqrModel, X, Y) -> np.ndarray:
    """Region membership == score <= q_hat (the exact-validity duality)."""
    return mcqr_score(model.cvae, model.grid, X, Y) <= model.q_hat


def mcqr_extents(model: McqrModel, X) -> np.ndarray:
    """Per-dimension extents of the ball-union region, shape (n, label_dim)."""
    centers = decode_grid(model.cvae, model.grid, X)
    return (centers.max(axis=1) + model.q_hat) - (centers.min(axis=1) - model.q_hat)


# --- checkpoint glue ------------------------------------------------------


def mcqr_to_arrays(model: McqrModel) -> tuple[dict, dict[str, np.ndarray]]:
    cfg = model.config
    meta = {
        "kind": "mcqr",
        "alpha": model.alpha,
        "encoder": model.cvae.encoder.to_meta(),
        "decoder": model.cvae.decoder.to_meta(),
        "point_net": None if model.point_net is None else model.point_net.to_meta(),
        "latent_dim": model.cvae.latent_dim,
        "feature_dim": model.cvae.feature_dim,
        "label_dim": model.cvae.label_dim,
        "grid_radius": model.grid.radius,
        "grid_seed": model.grid.seed,
        "config": {
            "latent_dim": cfg.latent_dim,
            "n_grid": cfg.n_grid,
            "grid_radius": cfg.grid_radius,
            "mc_passes": cfg.mc_passes,
            "mc_rate": cfg.mc_rate,
            "point_hidden": list(cfg.point_hidden),
            "point_dropout": cfg.point_dropout,
            "point_epochs": cfg.point_epochs,
            "cvae_hidden": list(cfg.cvae_hidden),
            "cvae_epochs": cfg.cvae_epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "seed": cfg.seed,
        },
    }
    arrays = {
        "encoder_params": model.cvae.encoder.params,
        "decoder_params": model.cvae.decoder.params,
        "grid_points": model.grid.points,
    }
    if model.point_net is not None:
        arrays["point_params"] = model.point_net.params
    if model.record is not None:
        arrays["cal_scores"] = model.record.scores
    return meta, arrays


def mcqr_from_arrays(meta: dict, arrays: dict[str, np.ndarray]) -> McqrModel:
    cfg_kwargs = dict(meta["config"])
    cfg_kwargs["point_hidden"] = tuple(cfg_kwargs["point_hidden"])
    cfg_kwargs["cvae_hidden"] = tuple(cfg_kwargs["cvae_hidden"])
    cfg = McqrConfig(**cfg_kwargs)
    cvae = Cvae(
        encoder=Network.from_meta(meta["encoder"], arrays["encoder_params"]),
        decoder=Network.from_meta(meta["decoder"], arrays["decoder_params"]),
        latent_dim=meta["latent_dim"],
        feature_dim=meta["feature_dim"],
        label_dim=meta["label_dim"],
    )
    grid = LatentGrid(
        points=arrays["grid_points"], radius=meta["grid_radius"], seed=meta["grid_seed"]
    )
    point = None
    if meta["point_net"] is not None:
        point = Network.from_meta(meta["point_net"], arrays["point_params"])
    record = None
    if "cal_scores" in arrays and meta["alpha"] is not None:
        record = calibrate(arrays["cal_scores"], meta["alpha"], cqr_level)
    return McqrModel(
        cvae=cvae, grid=grid, point_net=point, record=record, alpha=meta["alpha"], config=cfg
    )
