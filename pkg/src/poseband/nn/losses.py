"""Training losses and their analytic gradients.

Reductions: mse, pinball, interval score and sharpness average over every
element (batch and output dimensions); the KL term averages per-sample sums
over the batch; the calibration objective takes per-dimension batch means
and then averages across dimensions, because its branch indicators are
per-dimension. Indicator factors are treated as constants during
differentiation (the usual subgradient convention for pinball-type losses),
so gradients are exact everywhere except on the kink sets themselves.

Each ``*_grad`` function returns the derivative of the scalar loss with
respect to the prediction argument(s), ready to feed into a network
backward pass.
"""
from __future__ import annotations

import numpy as np

from ..errors import ContractViolation, InvalidInput

_CLIP = 1e-12


def _pair(y, q):
    y = np.asarray(y, dtype=float)
    q = np.asarray(q, dtype=float)
    if y.shape != q.shape:
        raise InvalidInput(f"shape mismatch: {y.shape} vs {q.shape}")
    return y, q


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha!r}")
    return alpha


def mse_loss(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.mean((y_hat - y) ** 2))


def mse_grad(y, y_hat) -> np.ndarray:
    y, y_hat = _pair(y, y_hat)
    return 2.0 * (y_hat - y) / y.size


def _as_batch(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    return a


def kl_loss(mu, logvar) -> float:
    """Mean over the batch of 0.5 * sum_dim(mu^2 + sigma^2 - 1 - log sigma^2).

    Nonnegative, zero exactly at mu = 0, logvar = 0.
    """
    mu = _as_batch(mu)
    logvar = _as_batch(logvar)
    if mu.shape != logvar.shape:
        raise InvalidInput(f"shape mismatch: {mu.shape} vs {logvar.shape}")
    per_sample = 0.5 * np.sum(mu**2 + np.exp(logvar) - 1.0 - logvar, axis=1)
    return float(np.mean(per_sample))


def kl_grads(mu, logvar) -> tuple[np.ndarray, np.ndarray]:
    mu = _as_batch(mu)
    logvar = _as_batch(logvar)
    n = mu.shape[0]
    return mu / n, 0.5 * (np.exp(logvar) - 1.0) / n


def pinball_loss(y, q, alpha) -> float:
    """Quantile loss: mean of alpha*(y-q)+ + (1-alpha)*(q-y)+."""
    alpha = _check_alpha(alpha)
    y, q = _pair(y, q)
    diff = y - q
    return float(np.mean(alpha * np.maximum(diff, 0.0) + (1 - alpha) * np.maximum(-diff, 0.0)))


def pinball_grad(y, q, alpha) -> np.ndarray:
    alpha = _check_alpha(alpha)
    y, q = _pair(y, q)
    return (-(alpha) * (y > q) + (1 - alpha) * (y < q)) / y.size


def interval_score_loss(y, q_lo, q_hi, alpha) -> float:
    """Winkler interval score, averaged over batch and dimensions.

    (q_hi - q_lo) + (2/alpha)(q_lo - y) 1{y < q_lo} + (2/alpha)(y - q_hi) 1{y > q_hi}.
    Crossing bounds are a contract violation.
    """
    alpha = _check_alpha(alpha)
    y, q_lo = _pair(y, q_lo)
    _, q_hi = _pair(y, q_hi)
    if np.any(q_lo > q_hi):
        raise ContractViolation("crossing quantiles: q_lo > q_hi")
    width = q_hi - q_lo
    below = np.maximum(q_lo - y, 0.0)
    above = np.maximum(y - q_hi, 0.0)
    return float(np.mean(width + (2.0 / alpha) * (below + above)))


def interval_score_grads(y, q_lo, q_hi, alpha) -> tuple[np.ndarray, np.ndarray]:
    alpha = _check_alpha(alpha)
    y, q_lo = _pair(y, q_lo)
    _, q_hi = _pair(y, q_hi)
    d_lo = (-1.0 + (2.0 / alpha) * (y < q_lo)) / y.size
    d_hi = (1.0 - (2.0 / alpha) * (y > q_hi)) / y.size
    return d_lo, d_hi


def _cal_terms(y, bound):
    """Per-dimension batch means of the under/over coverage penalties."""
    y = _as_batch(y)
    bound = _as_batch(bound)
    if y.shape != bound.shape:
        raise InvalidInput(f"shape mismatch: {y.shape} vs {bound.shape}")
    t_under = np.mean((y - bound) * (y > bound), axis=0)
    t_over = np.mean((bound - y) * (y < bound), axis=0)
    return y, bound, t_under, t_over


def cal_obj(y, bound, p, p_cov_avg) -> float:
    """Calibration objective for one bound, driven by interval coverage.

    1{p_cov_avg < p} * mean[(y-b) 1{y > b}] + 1{p_cov_avg > p} * mean[(b-y) 1{y < b}],
    computed per output dimension (p_cov_avg may be per-dimension) and then
    averaged across dimensions. Exactly zero when p_cov_avg == p.
    """
    y, bound, t_under, t_over = _cal_terms(y, bound)
    p = float(p)
    pcov = np.broadcast_to(np.asarray(p_cov_avg, dtype=float), (y.shape[1],))
    value = np.where(pcov < p, t_under, 0.0) + np.where(pcov > p, t_over, 0.0)
    return float(np.mean(value))


def cal_obj_grad(y, bound, p, p_cov_avg) -> np.ndarray:
    y = _as_batch(y)
    bound = _as_batch(bound)
    p = float(p)
    pcov = np.broadcast_to(np.asarray(p_cov_avg, dtype=float), (y.shape[1],))
    under = (pcov < p).astype(float)
    over = (pcov > p).astype(float)
    g = under * (-(y > bound).astype(float)) + over * (y < bound).astype(float)
    return g / y.size


def cal_obj_per_bound(y, bound, level) -> float:
    """Variant: calibrate one bound against its own quantile level.

    The empirical CDF coverage of the bound, mean 1{y <= b} per dimension,
    is compared to ``level`` (e.g. 0.05 for a lower 5% bound), and the same
    under/over penalties apply. Offered behind the CJP ``cal_mode`` flag.
    """
    y, bound, t_under, t_over = _cal_terms(y, bound)
    level = float(level)
    p_bound = np.mean(y <= bound, axis=0)
    value = np.where(p_bound < level, t_under, 0.0) + np.where(p_bound > level, t_over, 0.0)
    return float(np.mean(value))


def cal_obj_per_bound_grad(y, bound, level) -> np.ndarray:
    y = _as_batch(y)
    bound = _as_batch(bound)
    level = float(level)
    p_bound = np.mean(y <= bound, axis=0)
    under = (p_bound < level).astype(float)
    over = (p_bound > level).astype(float)
    g = under * (-(y > bound).astype(float)) + over * (y < bound).astype(float)
    return g / y.size


def sharp_obj(q_lo, q_hi, p) -> float:
    """Sharpness objective: mean (q_lo - q_hi) if p <= 0.5 else mean (q_hi - q_lo)."""
    q_lo, q_hi = _pair(q_lo, q_hi)
    if float(p) <= 0.5:
        return float(np.mean(q_lo - q_hi))
    return float(np.mean(q_hi - q_lo))


def sharp_obj_grads(q_lo, q_hi, p) -> tuple[np.ndarray, np.ndarray]:
    q_lo, q_hi = _pair(q_lo, q_hi)
    sign = -1.0 if float(p) <= 0.5 else 1.0
    d_lo = np.full_like(q_lo, -sign / q_lo.size)
    d_hi = np.full_like(q_hi, sign / q_hi.size)
    return d_lo, d_hi


def comcal_loss(cal: float, sharp: float, lam: float) -> float:
    """(1 - lambda) * cal + lambda * sharp, lambda in [0, 1]."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise InvalidInput(f"lambda must lie in [0, 1], got {lam!r}")
    return (1.0 - lam) * float(cal) + lam * float(sharp)


def cross_entropy_loss(onehot, probs) -> float:
    """Mean negative log of the true-class probability (clipped at 1e-12)."""
    onehot, probs = _pair(onehot, probs)
    if onehot.ndim != 2:
        raise InvalidInput("labels and outputs must be (n, K) matrices")
    row_sums = probs.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise InvalidInput("softmax outputs must sum to 1 per row")
    p_true = np.sum(onehot * probs, axis=1)
    return float(np.mean(-np.log(np.maximum(p_true, _CLIP))))


def cross_entropy_grad(onehot, probs) -> np.ndarray:
    onehot, probs = _pair(onehot, probs)
    safe = np.maximum(probs, _CLIP)
    grad = np.where((onehot > 0) & (probs > _CLIP), -onehot / safe, 0.0)
    return grad / onehot.shape[0]
