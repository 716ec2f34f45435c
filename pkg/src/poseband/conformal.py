"""Split-conformal primitives: exact quantile levels and empirical quantiles.

Conformal coverage guarantees hinge on one precise order-statistic
convention, so this module keeps levels as exact rationals and always
returns the ceil(level * n)-th smallest score. Interpolating quantile
variants are deliberately not offered.

Float levels are interpreted at their exact binary value (``Fraction(x)``);
pass a :class:`fractions.Fraction` to express an exact rational level. The
levels produced by :func:`cqr_level` and :func:`csp_level` are exact, which
is what makes boundary cases such as n=9, alpha=0.1 (level = 1 in real
arithmetic) come out right.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidInput


def _check_n_alpha(n: int, alpha: float) -> None:
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidInput(f"n must be a positive integer, got {n!r}")
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha!r}")


def cqr_level(n: int, alpha: float) -> Fraction:
    """Exact (1 - alpha) * (1 + 1/n); may exceed 1 for small n."""
    _check_n_alpha(n, alpha)
    return (1 - Fraction(float(alpha))) * (1 + Fraction(1, int(n)))


def csp_level(n: int, alpha: float) -> Fraction:
    """Exact ceil((n + 1) * (1 - alpha)) / n; may exceed 1 for small n."""
    _check_n_alpha(n, alpha)
    return Fraction(math.ceil((int(n) + 1) * (1 - Fraction(float(alpha)))), int(n))


def empirical_quantile(values, level) -> float:
    """Return the ceil(level * n)-th smallest value, or +inf when level > 1.

    The +inf sentinel is the statistically correct answer for calibration
    sets too small to support the requested level; callers surface it as an
    "unbounded interval" flag rather than an error.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidInput("values must be a non-empty one-dimensional array")
    if not np.all(np.isfinite(arr)):
        raise InvalidInput("values must be finite")
    lv = level if isinstance(level, Fraction) else Fraction(float(level))
    if lv <= 0:
        raise InvalidInput(f"level must be positive, got {level!r}")
    if lv > 1:
        return math.inf
    k = math.ceil(lv * arr.size)
    return float(np.partition(arr, k - 1)[k - 1])


@dataclass
class CalibrationRecord:
    """Nonconformity scores over a calibration set with their correction.

    ``level`` is stored as the exact rational computed from (n, alpha);
    ``correction`` may be +inf when the level exceeds 1.
    """

    scores: np.ndarray
    alpha: float
    level: Fraction
    correction: float

    @property
    def n(self) -> int:
        return int(self.scores.size)

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.correction)


def calibrate(scores, alpha: float, level_fn=cqr_level) -> CalibrationRecord:
    """Build a :class:`CalibrationRecord` from scores at miscoverage alpha."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.size == 0:
        raise InvalidInput("scores must be a non-empty one-dimensional array")
    level = level_fn(scores.size, alpha)
    return CalibrationRecord(
        scores=scores,
        alpha=float(alpha),
        level=level,
        correction=empirical_quantile(scores, level),
    )
