"""Datasets: file ingestion, exchangeable splits, synthetic trajectories, noise.

Pose file format (text, '#' starts a comment, blank lines ignored)::

    t x y z w p q r

One sample per line: timestamp in seconds, position in meters, then the
orientation quaternion scalar-first. Floats are rendered with ``repr`` so
that write -> read round-trips are exact. Feature files are CSV with header
``f0,...,f{D-1}``, paired to pose lines by row order.

The synthetic trajectory is a sum of low-frequency sinusoids per pose
dimension; features are a frozen random tanh map of the pose plus additive
noise whose scale sigma(t) = sigma0 * (1 + gain * L(t)) follows a smooth
lighting curve L(t) in [0, 1]. Labels are the exact poses, so all label
uncertainty downstream is inferential (what can be said about the pose
given noisy features), which is the property the adaptive-interval
experiments probe.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInput, ParseError, ValidationError
from .geometry import Pose6D, Trajectory, euler_to_quat, quat_to_euler, wrap_angles
from .rng import stream

NOISE_KINDS = ("none", "gaussian", "salt_pepper", "speckle")


@dataclass(frozen=True)
class Sample:
    """One feature vector with its exact pose label."""

    features: np.ndarray
    label: Pose6D

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.ndim != 1 or not np.all(np.isfinite(features)):
            raise InvalidInput("features must be a finite one-dimensional vector")
        object.__setattr__(self, "features", features)


@dataclass
class DataSplit:
    """Disjoint train / calibration / test index sets."""

    train: np.ndarray
    cal: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "cal", "test"):
            idx = np.asarray(getattr(self, name), dtype=np.int64)
            if idx.ndim != 1:
                raise ValidationError(f"{name} indices must be one-dimensional")
            setattr(self, name, idx)
        combined = np.concatenate([self.train, self.cal, self.test])
        if combined.size != np.unique(combined).size:
            raise ValidationError("split index sets must be pairwise disjoint")
        if combined.size and combined.min() < 0:
            raise ValidationError("split indices must be nonnegative")

    @property
    def n(self) -> int:
        return int(self.train.size + self.cal.size + self.test.size)

    def covers(self, n: int) -> bool:
        combined = np.concatenate([self.train, self.cal, self.test])
        return combined.size == n and np.array_equal(np.sort(combined), np.arange(n))


def split_dataset(n: int, fractions, seed: int, min_cal: int = 20) -> DataSplit:
    """Uniformly random permutation split, deterministic given ``seed``.

    ``fractions`` is (train, cal) or (train, cal, test); sizes are
    round(f * n) for train and cal with the remainder going to test, so
    fractions may sum to less than 1. ``min_cal`` guards the calibration
    size; the library default of 20 matches the smallest calibration set
    the conformal machinery is expected to see (callers may lower it for
    toy cases, which is recorded in their own contracts).
    """
    if not isinstance(n, (int, np.integer)) or n < 3:
        raise ValidationError(f"dataset too small to split, got n={n!r}")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) not in (2, 3):
        raise ValidationError("fractions must be (train, cal) or (train, cal, test)")
    if any(f <= 0 for f in fractions):
        raise ValidationError(f"fractions must be positive, got {fractions}")
    if sum(fractions) > 1.0 + 1e-9:
        raise ValidationError(f"fractions must sum to at most 1, got {fractions}")
    n_train = int(round(fractions[0] * n))
    n_cal = int(round(fractions[1] * n))
    n_test = n - n_train - n_cal
    if n_train < 1 or n_test < 1:
        raise ValidationError(
            f"split sizes ({n_train}, {n_cal}, {n_test}) leave an empty subset"
        )
    if n_cal < min_cal:
        raise ValidationError(
            f"calibration set of {n_cal} is below the minimum of {min_cal}"
        )
    perm = stream(seed, "split").permutation(n)
    return DataSplit(
        train=np.sort(perm[:n_train]),
        cal=np.sort(perm[n_train : n_train + n_cal]),
        test=np.sort(perm[n_train + n_cal :]),
    )


@dataclass(frozen=True)
class NoiseSpec:
    """Feature-space analogue of image noise.

    gaussian: X + eps, eps ~ N(0, sigma^2 I).
    salt_pepper: each coordinate independently replaced by the saturation
    low/high bound with probability flip_prob/2 each; bounds default to the
    dataset min/max of the array being corrupted.
    speckle: X * (1 + eta), eta ~ N(0, speckle_sigma^2 I).
    """

    kind: str = "none"
    sigma: float = 0.0
    flip_prob: float = 0.0
    saturation: tuple[float, float] | None = None
    speckle_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValidationError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= float(self.flip_prob) <= 1.0:
            raise ValidationError(f"flip_prob must lie in [0, 1], got {self.flip_prob}")
        if float(self.sigma) < 0 or float(self.speckle_sigma) < 0:
            raise ValidationError("noise scales must be nonnegative")
        if self.saturation is not None:
            lo, hi = (float(v) for v in self.saturation)
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ValidationError(f"bad saturation bounds {self.saturation}")
            object.__setattr__(self, "saturation", (lo, hi))


def apply_noise(X: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Corrupt features according to ``spec``; deterministic given its seed.

    Zero-strength specs return a bit-exact copy of the input.
    """
    X = np.asarray(X, dtype=float)
    if spec.kind == "none":
        return X.copy()
    if spec.kind == "gaussian":
        if spec.sigma == 0.0:
            return X.copy()
        rng = stream(spec.seed, "noise", "gaussian")
        return X + spec.sigma * rng.standard_normal(X.shape)
    if spec.kind == "salt_pepper":
        if spec.flip_prob == 0.0:
            return X.copy()
        lo, hi = spec.saturation if spec.saturation is not None else (X.min(), X.max())
        rng = stream(spec.seed, "noise", "salt_pepper")
        u = rng.random(X.shape)
        out = X.copy()
        out[u < spec.flip_prob / 2.0] = lo
        out[(u >= spec.flip_prob / 2.0) & (u < spec.flip_prob)] = hi
        return out
    if spec.kind == "speckle":
        if spec.speckle_sigma == 0.0:
            return X.copy()
        rng = stream(spec.seed, "noise", "speckle")
        return X * (1.0 + spec.speckle_sigma * rng.standard_normal(X.shape))
    raise ValidationError(f"unknown noise kind {spec.kind!r}")


@dataclass(frozen=True)
class SimConfig:
    """Synthetic trajectory + feature generation settings.

    The desk-scale default is n=3500 samples (2000/500/1000 split) with 32
    features. ``lighting_period`` defaults to the full duration, giving one
    smooth dark-bright-dark cycle.
    """

    n: int = 3500
    feature_dim: int = 32
    seed: int = 0
    duration: float = 60.0
    start_pose: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    n_harmonics: int = 3
    base_sigma: float = 0.05
    noise_gain: float = 4.0
    lighting_period: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"n must be >= 1, got {self.n}")
        if self.feature_dim < 1:
            raise ValidationError(f"feature_dim must be >= 1, got {self.feature_dim}")
        if self.base_sigma < 0 or self.noise_gain < 0:
            raise ValidationError("base_sigma and noise_gain must be nonnegative")
        if self.duration <= 0:
            raise ValidationError("duration must be positive")
        if self.n_harmonics < 1:
            raise ValidationError("n_harmonics must be >= 1")
        if len(tuple(self.start_pose)) != 6:
            raise ValidationError("start_pose must have six entries")
        object.__setattr__(self, "start_pose", tuple(float(v) for v in self.start_pose))

    def timestamps(self) -> np.ndarray:
        if self.n == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.duration, self.n)

    def lighting(self, t: np.ndarray) -> np.ndarray:
        period = self.lighting_period if self.lighting_period else self.duration
        return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.asarray(t) / period))

    def noise_scale(self, t: np.ndarray) -> np.ndarray:
        return self.base_sigma * (1.0 + self.noise_gain * self.lighting(t))


# Amplitude ranges per dimension group: positions in meters, angles in
# radians kept small enough that three harmonics stay clear of gimbal lock.
_POS_AMP = (0.5, 1.5)
_ANG_AMP = (0.1, 0.35)


def _simulate_arrays(cfg: SimConfig):
    t = cfg.timestamps()
    rng_path = stream(cfg.seed, "path")
    poses = np.empty((cfg.n, 6))
    for d in range(6):
        lo, hi = _POS_AMP if d < 3 else _ANG_AMP
        amps = rng_path.uniform(lo, hi, cfg.n_harmonics)
        # Non-integer cycle counts keep the path from repeating, so the
        # lighting curve stays (approximately) a function of the pose.
        cycles = np.arange(1, cfg.n_harmonics + 1) + rng_path.uniform(
            0.05, 0.95, cfg.n_harmonics
        )
        phases = rng_path.uniform(0.0, 2.0 * np.pi, cfg.n_harmonics)
        omegas = 2.0 * np.pi * cycles / cfg.duration
        wave = np.sum(
            amps * (np.sin(np.outer(t, omegas) + phases) - np.sin(phases)), axis=1
        )
        poses[:, d] = cfg.start_pose[d] + wave
    poses[:, 3:] = wrap_angles(poses[:, 3:])

    rng_map = stream(cfg.seed, "featmap")
    w = rng_map.normal(0.0, 0.5, (cfg.feature_dim, 6))
    b = rng_map.uniform(-1.0, 1.0, cfg.feature_dim)
    clean = np.tanh(poses @ w.T + b)

    sigma = cfg.noise_scale(t)
    eps = stream(cfg.seed, "featnoise").standard_normal((cfg.n, cfg.feature_dim))
    features = clean + sigma[:, None] * eps
    return t, poses, features, sigma


def simulate_trajectory(cfg: SimConfig) -> tuple[list[Sample], np.ndarray]:
    """Generate samples plus the ground-truth feature noise scale per index."""
    _, poses, features, sigma = _simulate_arrays(cfg)
    samples = [
        Sample(features=features[i], label=Pose6D.from_array(poses[i]))
        for i in range(cfg.n)
    ]
    return samples, sigma


@dataclass
class PoseDataset:
    """Feature matrix, exact pose labels, and timestamps."""

    features: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray
    noise_scale: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        n = self.timestamps.size
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ValidationError("features must have shape (n, d)")
        if self.labels.shape != (n, 6):
            raise ValidationError("labels must have shape (n, 6)")
        if not (
            np.all(np.isfinite(self.features))
            and np.all(np.isfinite(self.labels))
            and np.all(np.isfinite(self.timestamps))
        ):
            raise ValidationError("dataset entries must be finite")
        if self.noise_scale is not None:
            self.noise_scale = np.asarray(self.noise_scale, dtype=float)
            if self.noise_scale.shape != (n,):
                raise ValidationError("noise_scale must have shape (n,)")

    @property
    def n(self) -> int:
        return int(self.timestamps.size)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def trajectory(self) -> Trajectory:
        return Trajectory(timestamps=self.timestamps, poses=self.labels)

    def samples(self) -> list[Sample]:
        return [
            Sample(features=self.features[i], label=Pose6D.from_array(self.labels[i]))
            for i in range(self.n)
        ]

    def with_features(self, features: np.ndarray) -> "PoseDataset":
        return PoseDataset(
            features=features,
            labels=self.labels,
            timestamps=self.timestamps,
            noise_scale=self.noise_scale,
        )

    @classmethod
    def simulate(cls, cfg: SimConfig) -> "PoseDataset":
        t, poses, features, sigma = _simulate_arrays(cfg)
        return cls(features=features, labels=poses, timestamps=t, noise_scale=sigma)

    @classmethod
    def from_files(cls, pose_path, feature_path) -> "PoseDataset":
        traj = load_pose_file(pose_path)
        features = load_feature_csv(feature_path)
        if features.shape[0] != len(traj):
            raise ValidationError(
                f"feature rows ({features.shape[0]}) do not match pose lines ({len(traj)})"
            )
        return cls(features=features, labels=traj.poses, timestamps=traj.timestamps)


def _render_float(v: float) -> str:
    return repr(float(v))


def load_pose_file(path) -> Trajectory:
    """Parse a pose file into a trajectory (quaternions converted to Euler)."""
    path = Path(path)
    times: list[float] = []
    positions: list[list[float]] = []
    quats: list[list[float]] = []
    angles: list[tuple[float, float, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 8:
                raise ParseError(
                    f"expected 8 fields 't x y z w p q r', got {len(fields)}", lineno
                )
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise ParseError(f"bad number in {line!r}", lineno) from exc
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite value", lineno)
            try:
                rpy = quat_to_euler(values[4:8])
            except InvalidInput as exc:
                raise ParseError(str(exc), lineno) from exc
            times.append(values[0])
            positions.append(values[1:4])
            quats.append(values[4:8])
            angles.append(rpy)
    if not times:
        raise ValidationError(f"{path}: no samples")
    poses = np.hstack([np.asarray(positions), np.asarray(angles)])
    return Trajectory(
        timestamps=np.asarray(times), poses=poses, source_quats=np.asarray(quats)
    )


def save_pose_file(traj: Trajectory, path) -> None:
    """Write a trajectory in the pose file format.

    Source quaternions are re-rendered verbatim when the trajectory carries
    them (so load/save round-trips are bit-exact); otherwise quaternions are
    computed from the Euler angles.
    """
    lines = ["# t x y z w p q r"]
    for i in range(len(traj)):
        if traj.source_quats is not None:
            quat = traj.source_quats[i]
        else:
            quat = euler_to_quat(traj.poses[i, 3:]).to_array()
        fields = [traj.timestamps[i], *traj.poses[i, :3], *quat]
        lines.append(" ".join(_render_float(v) for v in fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_feature_csv(path) -> np.ndarray:
    """Read a feature CSV with header f0..f{D-1} into an (n, D) matrix."""
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: no samples") from None
        expected = [f"f{i}" for i in range(len(header))]
        if header != expected:
            raise ParseError(f"bad header {header!r}, expected {expected!r}", 1)
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} columns, got {len(row)}", lineno
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise ParseError(f"bad number in row {row!r}", lineno) from exc
    if not rows:
        raise ValidationError(f"{path}: no samples")
    return np.asarray(rows)


def save_feature_csv(features: np.ndarray, path) -> None:
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise InvalidInput("features must be a 2-D matrix")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(features.shape[1])])
        for row in features:
            writer.writerow([_render_float(v) for v in row])
