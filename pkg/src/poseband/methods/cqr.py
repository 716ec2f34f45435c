"""Univariate conformalized quantile regression per pose dimension.

One quantile forest per dimension supplies raw central intervals at levels
(alpha/2, 1 - alpha/2); a held-out calibration set turns them into
conformal intervals via the additive correction Q_cal, the empirical
(1 - alpha)(1 + 1/n)-th quantile of the scores max(Q_lo - y, y - Q_hi).
The six calibrated 1-D bands multiply into an axis-aligned box region.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from ..conformal import CalibrationRecord, calibrate, cqr_level, empirical_quantile
from ..data import DataSplit, PoseDataset
from ..errors import ContractViolation, InvalidInput, ValidationError
from ..forest import (
    Forest,
    ForestConfig,
    fit_forest,
    forest_from_arrays,
    forest_to_arrays,
    predict_quantiles_batch,
)
from ..geometry import POSE_DIMS
from ..regions import Box
from ..rng import substream_seeds


@dataclass
class IntervalBand:
    """Raw and conformally calibrated per-dimension interval bounds.

    The calibrated width is *defined* through the correction identity
    ``width = raw_width + 2 * correction`` (the same algebra that produces
    ``lower = lower_raw - correction`` and ``upper = upper_raw +
    correction``), so that identity holds bit-exactly on every prediction.
    Corrections may be +inf (unbounded intervals) or negative (a model that
    overcovers gets tightened; with extreme overcoverage the calibrated
    interval can be empty, which is the statistically correct outcome).
    """

    lower_raw: np.ndarray
    upper_raw: np.ndarray
    correction: np.ndarray

    def __post_init__(self):
        self.lower_raw = np.asarray(self.lower_raw, dtype=float)
        self.upper_raw = np.asarray(self.upper_raw, dtype=float)
        self.correction = np.asarray(self.correction, dtype=float)
        if self.lower_raw.shape != self.upper_raw.shape:
            raise InvalidInput("raw bound shapes differ")
        if self.correction.shape != self.lower_raw.shape[-1:]:
            raise InvalidInput(
                f"correction must have shape ({self.lower_raw.shape[-1]},)"
            )
        if np.any(self.lower_raw > self.upper_raw):
            raise ContractViolation("raw lower bound exceeds raw upper bound")
        self.lower = self.lower_raw - self.correction
        self.upper = self.upper_raw + self.correction
        self.raw_width = self.upper_raw - self.lower_raw
        self.width = self.raw_width + 2.0 * self.correction

    @property
    def unbounded(self) -> np.ndarray:
        return np.isinf(self.correction)

    def contains(self, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels, dtype=float)
        return (labels >= self.lower) & (labels <= self.upper)


@dataclass
class CqrModel:
    forests: list[Forest]
    records: list[CalibrationRecord]
    alpha: float

    @property
    def levels(self) -> tuple[float, float]:
        return (self.alpha / 2.0, 1.0 - self.alpha / 2.0)

    @property
    def correction(self) -> np.ndarray:
        return np.array([rec.correction for rec in self.records])


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha!r}")
    return alpha


def _raw_bands(forests, X, alpha) -> tuple[np.ndarray, np.ndarray]:
    levels = (alpha / 2.0, 1.0 - alpha / 2.0)
    lower = np.empty((X.shape[0], len(forests)))
    upper = np.empty_like(lower)
    for d, forest in enumerate(forests):
        q = predict_quantiles_batch(forest, X, levels)
        lower[:, d] = q[:, 0]
        upper[:, d] = q[:, 1]
    return lower, upper


def cqr_fit(
    dataset: PoseDataset, split: DataSplit, alpha: float, forest_cfg: ForestConfig
) -> CqrModel:
    """Fit one forest per pose dimension on the train split and calibrate.

    Forests get per-dimension seeds derived from ``forest_cfg.seed``, so
    dimensions could be fitted in parallel without changing the result.
    """
    alpha = _check_alpha(alpha)
    if not split.covers(dataset.n):
        raise ValidationError("split does not cover the dataset")
    dim_seeds = substream_seeds(forest_cfg.seed, 6, "cqr", "dims")
    X_train = dataset.features[split.train]
    forests = []
    for d in range(6):
        cfg_d = replace(forest_cfg, seed=int(dim_seeds[d]))
        forests.append(fit_forest(X_train, dataset.labels[split.train, d], cfg_d))
    model = CqrModel(forests=forests, records=[], alpha=alpha)
    return cqr_calibrate(
        model, dataset.features[split.cal], dataset.labels[split.cal], alpha
    )


def cqr_scores(model: CqrModel, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Conformal scores E = max(Q_lo - y, y - Q_hi), one column per dimension."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    lower, upper = _raw_bands(model.forests, X, model.alpha)
    return np.maximum(lower - Y, Y - upper)


def cqr_calibrate(model: CqrModel, X, Y, alpha: float | None = None) -> CqrModel:
    """Recompute calibration records on (X, Y); reuses the fitted forests."""
    alpha = _check_alpha(model.alpha if alpha is None else alpha)
    recal = CqrModel(forests=model.forests, records=[], alpha=alpha)
    scores = cqr_scores(recal, X, Y)
    recal.records = [
        calibrate(scores[:, d], alpha, cqr_level) for d in range(scores.shape[1])
    ]
    return recal


def cqr_predict(model: CqrModel, X: np.ndarray) -> IntervalBand:
    """Calibrated per-dimension intervals for a feature batch."""
    if not model.records:
        raise InvalidInput("model is not calibrated")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lower, upper = _raw_bands(model.forests, X, model.alpha)
    return IntervalBand(lower_raw=lower, upper_raw=upper, correction=model.correction)


def box_region(band: IntervalBand, index: int = 0) -> Box:
    """The 6-D axis-aligned box for one prediction of the band."""
    lower = np.atleast_2d(band.lower)[index]
    upper = np.atleast_2d(band.upper)[index]
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise InvalidInput("cannot build a box from an unbounded band")
    return Box(lower=lower, upper=np.maximum(lower, upper))


# --- checkpoint glue ------------------------------------------------------


def cqr_to_arrays(model: CqrModel) -> tuple[dict, dict[str, np.ndarray]]:
    meta = {"kind": "cqr", "alpha": model.alpha, "dims": list(POSE_DIMS), "forests": []}
    arrays: dict[str, np.ndarray] = {}
    for d, forest in enumerate(model.forests):
        f_meta, f_arrays = forest_to_arrays(forest)
        meta["forests"].append(f_meta)
        for name, arr in f_arrays.items():
            arrays[f"f{d}_{name}"] = arr
    for d, rec in enumerate(model.records):
        arrays[f"scores_{d}"] = rec.scores
    meta["level_num"] = [rec.level.numerator for rec in model.records]
    meta["level_den"] = [rec.level.denominator for rec in model.records]
    return meta, arrays


def cqr_from_arrays(meta: dict, arrays: dict[str, np.ndarray]) -> CqrModel:
    forests = []
    for d, f_meta in enumerate(meta["forests"]):
        prefix = f"f{d}_"
        f_arrays = {
            name[len(prefix) :]: arr
            for name, arr in arrays.items()
            if name.startswith(prefix)
        }
        forests.append(forest_from_arrays(f_meta, f_arrays))
    records = []
    for d in range(len(meta["level_num"])):
        scores = arrays[f"scores_{d}"]
        level = Fraction(meta["level_num"][d], meta["level_den"][d])
        records.append(
            CalibrationRecord(
                scores=scores,
                alpha=meta["alpha"],
                level=level,
                correction=empirical_quantile(scores, level),
            )
        )
    return CqrModel(forests=forests, records=records, alpha=meta["alpha"])
