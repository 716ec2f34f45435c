"""Conformalized joint prediction: one network, mean pose plus quantile bounds.

The encoder maps features to a 3-D Gaussian latent; the decoder consumes the
latent sample alone and emits 18 values per input: the mean pose (6) and raw
lower/upper offsets (6 + 6) that pass through softplus, so Q_lo = y_hat -
softplus(r_lo) <= y_hat <= y_hat + softplus(r_hi) = Q_hi and quantile
crossing is impossible by construction. Training minimizes

    total = MSE + KL + interval score + combined calibration loss,

with the per-batch per-dimension coverage estimate p_cov_avg steering the
calibration branch (a cross-conformal style of calibration folded into
training). Inference uses the latent mean, so predictions are deterministic.
An optional post-hoc split-conformal step restores the finite-sample
coverage guarantee on top of the trained bounds.

``cal_mode`` selects between the literal interval-coverage calibration
objective (default) and a per-bound variant that targets each bound's own
quantile level; ``intscore_mode`` selects between one central interval score
at alpha = alpha_lo + (1 - alpha_hi) (default) and averaging the score
evaluated at each tail percentile.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..conformal import CalibrationRecord, calibrate, cqr_level
from ..data import DataSplit, PoseDataset
from ..errors import InvalidInput, TrainingDiverged, ValidationError
from ..geometry import POSE_DIMS
from ..nn import (
    Adam,
    Dense,
    GaussianLatent,
    Network,
    PReLU,
    cal_obj,
    cal_obj_grad,
    cal_obj_per_bound,
    cal_obj_per_bound_grad,
    comcal_loss,
    interval_score_grads,
    interval_score_loss,
    kl_grads,
    kl_loss,
    mse_grad,
    mse_loss,
    sharp_obj,
    sharp_obj_grads,
)
from ..rng import stream, substream_seeds
from .cqr import IntervalBand

CAL_MODES = ("interval", "per_bound")
INTSCORE_MODES = ("central", "per_percentile")


@dataclass(frozen=True)
class CjpConfig:
    lam: float = 0.5
    alpha_lo: float = 0.05
    alpha_hi: float = 0.95
    coverage_target: float = 0.9  # p
    latent_dim: int = 3
    trunk_hidden: tuple[int, ...] = (64, 64)
    decoder_hidden: tuple[int, ...] = (64, 64)
    epochs: int = 120
    batch_size: int = 256
    learning_rate: float = 3e-3
    seed: int = 0
    cal_mode: str = "interval"
    intscore_mode: str = "central"

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValidationError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 < self.alpha_lo < self.alpha_hi < 1.0:
            raise ValidationError(
                f"need 0 < alpha_lo < alpha_hi < 1, got ({self.alpha_lo}, {self.alpha_hi})"
            )
        if not 0.0 < self.coverage_target < 1.0:
            raise ValidationError("coverage_target must lie in (0, 1)")
        if self.cal_mode not in CAL_MODES:
            raise ValidationError(f"cal_mode must be one of {CAL_MODES}")
        if self.intscore_mode not in INTSCORE_MODES:
            raise ValidationError(f"intscore_mode must be one of {INTSCORE_MODES}")
        if self.latent_dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("bad training settings")
        object.__setattr__(self, "trunk_hidden", tuple(int(h) for h in self.trunk_hidden))
        object.__setattr__(
            self, "decoder_hidden", tuple(int(h) for h in self.decoder_hidden)
        )

    @property
    def interval_alpha(self) -> float:
        return self.alpha_lo + (1.0 - self.alpha_hi)


@dataclass
class CjpOutputs:
    """Everything the composite loss needs from one forward pass."""

    y_hat: np.ndarray
    q_lo: np.ndarray
    q_hi: np.ndarray
    raw: np.ndarray
    sig_lo: np.ndarray  # softplus'(r_lo)
    sig_hi: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray


@dataclass
class CjpModel:
    encoder: Network
    decoder: Network
    config: CjpConfig
    records: list[CalibrationRecord] = field(default_factory=list)

    @property
    def calibrated(self) -> bool:
        return bool(self.records)

    @property
    def correction(self) -> np.ndarray:
        if not self.records:
            return np.zeros(6)
        return np.array([rec.correction for rec in self.records])


def build_cjp_networks(feature_dim: int, cfg: CjpConfig) -> tuple[Network, Network]:
    seeds = substream_seeds(cfg.seed, 2, "cjp", "nets")
    enc_layers = []
    d = feature_dim
    for h in cfg.trunk_hidden:
        enc_layers += [Dense(d, h), PReLU(h)]
        d = h
    enc_layers += [Dense(d, 2 * cfg.latent_dim), GaussianLatent(cfg.latent_dim)]
    encoder = Network(enc_layers, in_dim=feature_dim, seed=int(seeds[0]))
    dec_layers = []
    d = cfg.latent_dim
    for h in cfg.decoder_hidden:
        dec_layers += [Dense(d, h), PReLU(h)]
        d = h
    dec_layers.append(Dense(d, 18))
    decoder = Network(dec_layers, in_dim=cfg.latent_dim, seed=int(seeds[1]))
    return encoder, decoder


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def cjp_forward(model: CjpModel, X, train: bool, seed: int = 0) -> CjpOutputs:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = model.encoder.forward(X, train=train, seed=seed)
    raw = model.decoder.forward(z, train=train, seed=seed)
    y_hat = raw[:, :6]
    r_lo = raw[:, 6:12]
    r_hi = raw[:, 12:18]
    return CjpOutputs(
        y_hat=y_hat,
        q_lo=y_hat - _softplus(r_lo),
        q_hi=y_hat + _softplus(r_hi),
        raw=raw,
        sig_lo=expit(r_lo),
        sig_hi=expit(r_hi),
        mu=model.encoder.latent_mu,
        logvar=model.encoder.latent_logvar,
    )


def batch_coverage(y, q_lo, q_hi) -> np.ndarray:
    """Per-dimension fraction of batch labels with q_lo <= y <= q_hi."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    q_lo = np.atleast_2d(np.asarray(q_lo, dtype=float))
    q_hi = np.atleast_2d(np.asarray(q_hi, dtype=float))
    if y.shape != q_lo.shape or y.shape != q_hi.shape:
        raise InvalidInput("shape mismatch in batch_coverage")
    return np.mean((y >= q_lo) & (y <= q_hi), axis=0)


def cjp_total_loss(y, outputs: CjpOutputs, cfg: CjpConfig):
    """Composite loss value, per-term breakdown, and gradients.

    Returns (total, terms, grads) where ``terms`` holds mse/kl/intscore/
    cal/sharp/comcal plus p_cov_avg, and ``grads`` maps to d(raw decoder
    output), d(mu), d(logvar) ready for the two backward passes.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    mse = mse_loss(y, outputs.y_hat)
    d_yhat_mse = mse_grad(y, outputs.y_hat)
    kl = kl_loss(outputs.mu, outputs.logvar)
    d_mu, d_logvar = kl_grads(outputs.mu, outputs.logvar)

    if cfg.intscore_mode == "central":
        intscore = interval_score_loss(y, outputs.q_lo, outputs.q_hi, cfg.interval_alpha)
        d_lo_int, d_hi_int = interval_score_grads(
            y, outputs.q_lo, outputs.q_hi, cfg.interval_alpha
        )
    else:
        a1, a2 = cfg.alpha_lo, 1.0 - cfg.alpha_hi
        intscore = 0.5 * (
            interval_score_loss(y, outputs.q_lo, outputs.q_hi, a1)
            + interval_score_loss(y, outputs.q_lo, outputs.q_hi, a2)
        )
        g1 = interval_score_grads(y, outputs.q_lo, outputs.q_hi, a1)
        g2 = interval_score_grads(y, outputs.q_lo, outputs.q_hi, a2)
        d_lo_int = 0.5 * (g1[0] + g2[0])
        d_hi_int = 0.5 * (g1[1] + g2[1])

    p_cov = batch_coverage(y, outputs.q_lo, outputs.q_hi)
    p = cfg.coverage_target
    if cfg.cal_mode == "interval":
        cal = cal_obj(y, outputs.q_lo, p, p_cov) + cal_obj(y, outputs.q_hi, p, p_cov)
        d_lo_cal = cal_obj_grad(y, outputs.q_lo, p, p_cov)
        d_hi_cal = cal_obj_grad(y, outputs.q_hi, p, p_cov)
    else:
        cal = cal_obj_per_bound(y, outputs.q_lo, cfg.alpha_lo) + cal_obj_per_bound(
            y, outputs.q_hi, cfg.alpha_hi
        )
        d_lo_cal = cal_obj_per_bound_grad(y, outputs.q_lo, cfg.alpha_lo)
        d_hi_cal = cal_obj_per_bound_grad(y, outputs.q_hi, cfg.alpha_hi)
    sharp = sharp_obj(outputs.q_lo, outputs.q_hi, p)
    d_lo_sharp, d_hi_sharp = sharp_obj_grads(outputs.q_lo, outputs.q_hi, p)
    comcal = comcal_loss(cal, sharp, cfg.lam)

    total = mse + kl + intscore + comcal
    d_lo = d_lo_int + (1.0 - cfg.lam) * d_lo_cal + cfg.lam * d_lo_sharp
    d_hi = d_hi_int + (1.0 - cfg.lam) * d_hi_cal + cfg.lam * d_hi_sharp

    d_raw = np.zeros_like(outputs.raw)
    d_raw[:, :6] = d_yhat_mse + d_lo + d_hi
    d_raw[:, 6:12] = -d_lo * outputs.sig_lo
    d_raw[:, 12:18] = d_hi * outputs.sig_hi
    terms = {
        "mse": mse,
        "kl": kl,
        "intscore": intscore,
        "cal": cal,
        "sharp": sharp,
        "comcal": comcal,
        "p_cov_avg": p_cov,
    }
    grads = {"d_raw": d_raw, "d_mu": d_mu, "d_logvar": d_logvar}
    return total, terms, grads


def cjp_train(
    dataset: PoseDataset, split: DataSplit, cfg: CjpConfig
) -> tuple[CjpModel, list[dict]]:
    """Adam training on the train split; returns the model and an epoch log.

    Each log row carries the four loss terms, their sum (computed as that
    literal sum, so the decomposition is exact), and per-dimension
    p_cov_avg averaged over the epoch's batches.
    """
    X = dataset.features[split.train]
    Y = dataset.labels[split.train]
    encoder, decoder = build_cjp_networks(dataset.dim, cfg)
    model = CjpModel(encoder=encoder, decoder=decoder, config=cfg)
    opt_enc = Adam(encoder.params, cfg.learning_rate)
    opt_dec = Adam(decoder.params, cfg.learning_rate)
    n = X.shape[0]
    step_seeds = iter(
        substream_seeds(cfg.seed, cfg.epochs * (n // cfg.batch_size + 2), "cjp", "steps")
    )
    log: list[dict] = []
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, "cjp", "shuffle", epoch).permutation(n)
        sums = {"mse": 0.0, "kl": 0.0, "intscore": 0.0, "comcal": 0.0}
        pcov_sum = np.zeros(6)
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            take = order[start : start + cfg.batch_size]
            seed = int(next(step_seeds))
            outputs = cjp_forward(model, X[take], train=True, seed=seed)
            total, terms, grads = cjp_total_loss(Y[take], outputs, cfg)
            if not math.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}: {terms}"
                )
            decoder.backward(grads["d_raw"])
            dz = decoder.last_input_grad
            encoder.backward(dz, latent_grad=(grads["d_mu"], grads["d_logvar"]))
            opt_dec.step(decoder.grads)
            opt_enc.step(encoder.grads)
            for key in sums:
                sums[key] += terms[key]
            pcov_sum += terms["p_cov_avg"]
            n_batches += 1
        row = {key: value / n_batches for key, value in sums.items()}
        row["total"] = row["mse"] + row["kl"] + row["intscore"] + row["comcal"]
        row["epoch"] = epoch
        for d, name in enumerate(POSE_DIMS):
            row[f"p_cov_{name}"] = pcov_sum[d] / n_batches
        log.append(row)
    return model, log


LOG_COLUMNS = (
    "epoch",
    "mse",
    "kl",
    "intscore",
    "comcal",
    "total",
    *(f"p_cov_{name}" for name in POSE_DIMS),
)


def write_training_log(log: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in log:
            writer.writerow({key: repr(row[key]) if key != "epoch" else row[key] for key in LOG_COLUMNS})


def cjp_predict(model: CjpModel, X) -> tuple[np.ndarray, IntervalBand]:
    """Deterministic prediction (latent mean): mean pose and interval band.

    The band's correction is zero until post-hoc calibration has run.
    """
    outputs = cjp_forward(model, X, train=False, seed=0)
    band = IntervalBand(
        lower_raw=outputs.q_lo, upper_raw=outputs.q_hi, correction=model.correction
    )
    return outputs.y_hat, band


def cjp_posthoc_calibrate(model: CjpModel, X, Y, alpha: float) -> CjpModel:
    """Split-conformal correction on top of the trained bounds (Q_cal per dim)."""
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha!r}")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    outputs = cjp_forward(model, X, train=False, seed=0)
    scores = np.maximum(outputs.q_lo - Y, Y - outputs.q_hi)
    model.records = [
        calibrate(scores[:, d], alpha, cqr_level) for d in range(scores.shape[1])
    ]
    return model


# --- checkpoint glue ------------------------------------------------------


def cjp_to_arrays(model: CjpModel) -> tuple[dict, dict[str, np.ndarray]]:
    cfg = model.config
    meta = {
        "kind": "cjp",
        "encoder": model.encoder.to_meta(),
        "decoder": model.decoder.to_meta(),
        "alpha": model.records[0].alpha if model.records else None,
        "config": {
            "lam": cfg.lam,
            "alpha_lo": cfg.alpha_lo,
            "alpha_hi": cfg.alpha_hi,
            "coverage_target": cfg.coverage_target,
            "latent_dim": cfg.latent_dim,
            "trunk_hidden": list(cfg.trunk_hidden),
            "decoder_hidden": list(cfg.decoder_hidden),
            "epochs": cfg.epochs,
            "batch_size": cfg.batch_size,
            "learning_rate": cfg.learning_rate,
            "seed": cfg.seed,
            "cal_mode": cfg.cal_mode,
            "intscore_mode": cfg.intscore_mode,
        },
    }
    arrays = {
        "encoder_params": model.encoder.params,
        "decoder_params": model.decoder.params,
    }
    for d, rec in enumerate(model.records):
        arrays[f"cal_scores_{d}"] = rec.scores
    return meta, arrays


def cjp_from_arrays(meta: dict, arrays: dict[str, np.ndarray]) -> CjpModel:
    cfg_kwargs = dict(meta["config"])
    cfg_kwargs["trunk_hidden"] = tuple(cfg_kwargs["trunk_hidden"])
    cfg_kwargs["decoder_hidden"] = tuple(cfg_kwargs["decoder_hidden"])
    cfg = CjpConfig(**cfg_kwargs)
    model = CjpModel(
        encoder=Network.from_meta(meta["encoder"], arrays["encoder_params"]),
        decoder=Network.from_meta(meta["decoder"], arrays["decoder_params"]),
        config=cfg,
    )
    if meta["alpha"] is not None:
        model.records = [
            calibrate(arrays[f"cal_scores_{d}"], meta["alpha"], cqr_level)
            for d in range(6)
        ]
    return model
