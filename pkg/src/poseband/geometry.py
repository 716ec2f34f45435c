"""6-DOF pose containers and quaternion <-> Euler angle conversion.

Conventions (also documented in the pose file format, see :mod:`poseband.data`):

* Euler angles are intrinsic ZYX, i.e. yaw about z, then pitch about the
  rotated y, then roll about the twice-rotated x. Angles are radians in
  (-pi, pi]; pitch produced by conversion lies in [-pi/2, pi/2].
* Quaternions are scalar-first ``(w, p, q, r)`` and unit norm.
* At gimbal lock (|pitch| = pi/2) roll is set to 0 and the remaining
  rotation is folded into yaw, a deterministic tie-break.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, ValidationError

POSE_DIMS = ("x", "y", "z", "roll", "pitch", "yaw")

_UNIT_TOL = 1e-6
_GIMBAL_TOL = 1e-9


def wrap_angle(angle: float) -> float:
    """Wrap an angle to (-pi, pi]. Exact identity for angles already inside."""
    angle = float(angle)
    if not math.isfinite(angle):
        raise InvalidInput(f"angle must be finite, got {angle!r}")
    wrapped = math.remainder(angle, math.tau)
    return math.pi if wrapped <= -math.pi else wrapped


def wrap_angles(values: np.ndarray) -> np.ndarray:
    """Vectorized :func:`wrap_angle`; values inside (-pi, pi] pass bit-exact."""
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise InvalidInput("angles must be finite")
    out = v.copy()
    outside = (v <= -np.pi) | (v > np.pi)
    if np.any(outside):
        w = np.remainder(v[outside] + np.pi, math.tau) - np.pi  # [-pi, pi)
        w[w <= -np.pi] = np.pi
        out[outside] = w
    return out


@dataclass(frozen=True)
class Pose6D:
    """Position in meters plus intrinsic ZYX Euler angles in radians.

    Angles are wrapped to (-pi, pi] at construction; all fields must be
    finite.
    """

    x: float
    y: float
    z: float
    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise InvalidInput(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, value)
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, wrap_angle(getattr(self, name)))

    @classmethod
    def from_array(cls, values) -> "Pose6D":
        values = np.asarray(values, dtype=float)
        if values.shape != (6,):
            raise InvalidInput(f"pose array must have shape (6,), got {values.shape}")
        return cls(*values)

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    def angles(self) -> tuple[float, float, float]:
        return (self.roll, self.pitch, self.yaw)


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion, scalar first: (w, p, q, r).

    Construction rejects non-finite or zero-norm input, rejects norms that
    deviate from 1 by more than 1e-6, and renormalizes otherwise, so a
    constructed quaternion is unit to within 1e-9 (in fact to rounding).
    Use :meth:`from_unnormalized` to accept arbitrary nonzero input.
    """

    w: float
    p: float
    q: float
    r: float

    def __post_init__(self):
        comps = [float(getattr(self, name)) for name in ("w", "p", "q", "r")]
        if not all(math.isfinite(c) for c in comps):
            raise InvalidInput(f"quaternion components must be finite, got {comps}")
        norm = math.sqrt(sum(c * c for c in comps))
        if norm == 0.0:
            raise InvalidInput("zero-norm quaternion")
        if abs(norm - 1.0) > _UNIT_TOL:
            raise InvalidInput(
                f"quaternion norm {norm!r} deviates from 1 by more than {_UNIT_TOL}"
            )
        for name, value in zip(("w", "p", "q", "r"), comps):
            object.__setattr__(self, name, value / norm)

    @classmethod
    def from_unnormalized(cls, w, p, q, r) -> "Quaternion":
        comps = [float(c) for c in (w, p, q, r)]
        if not all(math.isfinite(c) for c in comps):
            raise InvalidInput(f"quaternion components must be finite, got {comps}")
        norm = math.sqrt(sum(c * c for c in comps))
        if norm == 0.0:
            raise InvalidInput("zero-norm quaternion")
        return cls(*(c / norm for c in comps))

    def to_array(self) -> np.ndarray:
        return np.array([self.w, self.p, self.q, self.r])


def quat_to_euler(quat) -> tuple[float, float, float]:
    """Convert a unit quaternion to (roll, pitch, yaw), intrinsic ZYX.

    Accepts a :class:`Quaternion` or any 4-sequence ``(w, p, q, r)``; raw
    sequences are normalized when their norm is within 1e-6 of 1 and
    rejected otherwise. The double cover is collapsed: ``q`` and ``-q``
    produce bit-identical angles.
    """
    if not isinstance(quat, Quaternion):
        quat = Quaternion(*quat)
    w, p, q, r = quat.w, quat.p, quat.q, quat.r
    sinp = 2.0 * (w * q - r * p)
    if abs(sinp) > 1.0 - _GIMBAL_TOL:
        sign = math.copysign(1.0, sinp)
        pitch = sign * 0.5 * math.pi
        # Only yaw -/+ roll is determined at the poles; put it all in yaw.
        yaw = -2.0 * sign * math.atan2(p, w)
        return (0.0, pitch, wrap_angle(yaw))
    roll = math.atan2(2.0 * (w * p + q * r), 1.0 - 2.0 * (p * p + q * q))
    pitch = math.asin(max(-1.0, min(1.0, sinp)))
    yaw = math.atan2(2.0 * (w * r + p * q), 1.0 - 2.0 * (q * q + r * r))
    return (wrap_angle(roll), pitch, wrap_angle(yaw))


def euler_to_quat(angles) -> Quaternion:
    """Convert (roll, pitch, yaw), intrinsic ZYX, to a unit quaternion.

    The returned quaternion has canonical sign w >= 0.
    """
    try:
        roll, pitch, yaw = (float(a) for a in angles)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"angles must be three numbers, got {angles!r}") from exc
    if not all(math.isfinite(a) for a in (roll, pitch, yaw)):
        raise InvalidInput(f"angles must be finite, got {(roll, pitch, yaw)}")
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    w = cr * cp * cy + sr * sp * sy
    p = sr * cp * cy - cr * sp * sy
    q = cr * sp * cy + sr * cp * sy
    r = cr * cp * sy - sr * sp * cy
    if w < 0.0:
        w, p, q, r = -w, -p, -q, -r
    return Quaternion(w, p, q, r)


@dataclass
class Trajectory:
    """Time-stamped pose sequence with strictly increasing timestamps.

    ``source_quats`` preserves the quaternions as parsed from (or written
    to) a pose file so that save -> load -> save round-trips bit-for-bit;
    it is None for trajectories born in Euler form.
    """

    timestamps: np.ndarray
    poses: np.ndarray
    source_quats: np.ndarray | None = None

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.poses = np.asarray(self.poses, dtype=float)
        if self.timestamps.ndim != 1:
            raise ValidationError("timestamps must be one-dimensional")
        if self.poses.shape != (self.timestamps.size, 6):
            raise ValidationError(
                f"poses must have shape (n, 6), got {self.poses.shape}"
            )
        if not np.all(np.isfinite(self.timestamps)) or not np.all(
            np.isfinite(self.poses)
        ):
            raise ValidationError("trajectory entries must be finite")
        if self.timestamps.size == 0:
            raise ValidationError("no samples")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValidationError("timestamps must be strictly increasing")
        if self.source_quats is not None:
            self.source_quats = np.asarray(self.source_quats, dtype=float)
            if self.source_quats.shape != (self.timestamps.size, 4):
                raise ValidationError(
                    f"source_quats must have shape (n, 4), got {self.source_quats.shape}"
                )

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def pose(self, i: int) -> Pose6D:
        return Pose6D.from_array(self.poses[i])

    def __iter__(self):
        for i in range(len(self)):
            yield float(self.timestamps[i]), self.pose(i)
