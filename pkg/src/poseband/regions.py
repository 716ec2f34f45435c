"""Geometric prediction regions: boxes, products of bin unions, ball unions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput


@dataclass(frozen=True)
class Box:
    """Axis-aligned box."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise InvalidInput("box bounds must be matching vectors")
        if np.any(lower > upper):
            raise InvalidInput("box lower bounds exceed upper bounds")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return int(self.lower.size)

    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((points >= self.lower) & (points <= self.upper), axis=1)

    def bounding_box(self) -> "Box":
        return self


@dataclass(frozen=True)
class BinUnionProduct:
    """Cartesian product of per-dimension interval unions (union of boxes).

    ``intervals`` holds one (m_d, 2) array of [lo, hi] rows per dimension.
    Disjoint rows give a genuinely disconnected region.
    """

    intervals: tuple

    def __post_init__(self):
        cleaned = []
        for arr in self.intervals:
            arr = np.asarray(arr, dtype=float).reshape(-1, 2)
            if arr.size == 0:
                raise InvalidInput("each dimension needs at least one interval")
            if np.any(arr[:, 0] > arr[:, 1]):
                raise InvalidInput("interval lower bound exceeds upper bound")
            cleaned.append(arr)
        object.__setattr__(self, "intervals", tuple(cleaned))

    @property
    def dim(self) -> int:
        return len(self.intervals)

    @property
    def n_boxes(self) -> int:
        return int(np.prod([arr.shape[0] for arr in self.intervals]))

    def volume(self) -> float:
        total = 1.0
        for arr in self.intervals:
            total *= float(np.sum(arr[:, 1] - arr[:, 0]))
        return total

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.ones(points.shape[0], dtype=bool)
        for d, arr in enumerate(self.intervals):
            x = points[:, d][:, None]
            inside &= np.any((x >= arr[:, 0]) & (x <= arr[:, 1]), axis=1)
        return inside

    def bounding_box(self) -> Box:
        lower = np.array([arr[:, 0].min() for arr in self.intervals])
        upper = np.array([arr[:, 1].max() for arr in self.intervals])
        return Box(lower=lower, upper=upper)


@dataclass(frozen=True)
class BallUnion:
    """Union of equal-radius Euclidean balls around decoded centers."""

    centers: np.ndarray
    radius: float

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        if centers.size == 0:
            raise InvalidInput("ball union needs at least one center")
        if float(self.radius) < 0:
            raise InvalidInput("radius must be nonnegative")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return int(self.centers.shape[1])

    def min_distance(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        diffs = points[:, None, :] - self.centers[None, :, :]
        return np.sqrt(np.sum(diffs**2, axis=2)).min(axis=1)

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.min_distance(points) <= self.radius

    def bounding_box(self) -> Box:
        return Box(
            lower=self.centers.min(axis=0) - self.radius,
            upper=self.centers.max(axis=0) + self.radius,
        )

    def extents(self) -> np.ndarray:
        """Per-dimension extent: (max_c + r) - (min_c - r)."""
        return (self.centers.max(axis=0) + self.radius) - (
            self.centers.min(axis=0) - self.radius
        )
