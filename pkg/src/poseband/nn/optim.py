"""Adam, the package's single optimizer (bias-corrected, standard constants)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInput, TrainingDiverged


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One in-place Adam update; mutates ``state`` and returns ``params``."""
    if params.shape != grads.shape:
        raise InvalidInput(f"shape mismatch: {params.shape} vs {grads.shape}")
    if not np.all(np.isfinite(grads)):
        bad = int(np.sum(~np.isfinite(grads)))
        raise TrainingDiverged(
            f"non-finite gradient ({bad}/{grads.size} entries) at step {state.t + 1}"
        )
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grads
    state.v *= beta2
    state.v += (1.0 - beta2) * grads**2
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    params -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


class Adam:
    """Adam bound to one flat parameter vector."""

    def __init__(self, params: np.ndarray, lr: float):
        self.params = params
        self.lr = float(lr)
        self.state = AdamState.zeros(params.size)

    def step(self, grads: np.ndarray) -> None:
        adam_step(self.params, grads, self.state, self.lr)
