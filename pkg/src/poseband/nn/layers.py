"""Network layers with exact analytic gradients.

Each layer owns views into its network's flat parameter/gradient vectors
and caches whatever its backward pass needs. Stochastic layers (dropout,
gaussian latent) draw from the generator handed to ``forward``, so the
tuple (params, batch, mode, seed) fully determines every activation.
"""
from __future__ import annotations

import numpy as np

from ..errors import InvalidInput, StateError, ValidationError


class Layer:
    param_count: int = 0

    def bind(self, params: np.ndarray, grads: np.ndarray) -> None:
        pass

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def out_dim(self, in_dim: int) -> int:
        raise NotImplementedError

    def forward(self, x: np.ndarray, train: bool, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError


class Dense(Layer):
    """Affine map x @ W + b."""

    def __init__(self, in_dim: int, out_dim: int):
        if in_dim < 1 or out_dim < 1:
            raise ValidationError("dense dimensions must be positive")
        self.in_dim = int(in_dim)
        self.out = int(out_dim)
        self.param_count = self.in_dim * self.out + self.out
        self.w = self.b = self.gw = self.gb = None
        self._x = None

    def bind(self, params, grads):
        k = self.in_dim * self.out
        self.w = params[:k].reshape(self.in_dim, self.out)
        self.b = params[k:]
        self.gw = grads[:k].reshape(self.in_dim, self.out)
        self.gb = grads[k:]

    def init_params(self, rng):
        self.w[...] = rng.normal(0.0, 1.0 / np.sqrt(self.in_dim), self.w.shape)
        self.b[...] = 0.0

    def out_dim(self, in_dim):
        if in_dim != self.in_dim:
            raise ValidationError(f"dense expects input dim {self.in_dim}, got {in_dim}")
        return self.out

    def forward(self, x, train, rng):
        self._x = x
        return x @ self.w + self.b

    def backward(self, grad_out):
        if self._x is None:
            raise StateError("backward called before forward")
        self.gw += self._x.T @ grad_out
        self.gb += grad_out.sum(axis=0)
        return grad_out @ self.w.T

    def spec(self):
        return {"kind": "dense", "in_dim": self.in_dim, "out_dim": self.out}


class PReLU(Layer):
    """Parametric ReLU with one learnable slope per unit (init 0.25)."""

    def __init__(self, dim: int, init_slope: float = 0.25):
        if dim < 1:
            raise ValidationError("prelu dim must be positive")
        self.dim = int(dim)
        self.init_slope = float(init_slope)
        self.param_count = self.dim
        self.a = self.ga = None
        self._x = None

    def bind(self, params, grads):
        self.a = params
        self.ga = grads

    def init_params(self, rng):
        self.a[...] = self.init_slope

    def out_dim(self, in_dim):
        if in_dim != self.dim:
            raise ValidationError(f"prelu expects input dim {self.dim}, got {in_dim}")
        return self.dim

    def forward(self, x, train, rng):
        self._x = x
        return np.where(x > 0, x, self.a * x)

    def backward(self, grad_out):
        if self._x is None:
            raise StateError("backward called before forward")
        neg = self._x <= 0
        self.ga += np.sum(grad_out * np.where(neg, self._x, 0.0), axis=0)
        return grad_out * np.where(neg, self.a, 1.0)

    def spec(self):
        return {"kind": "prelu", "dim": self.dim, "init_slope": self.init_slope}


class Dropout(Layer):
    """Inverted dropout: scaled by 1/(1-rate) in train mode, identity in eval."""

    def __init__(self, rate: float):
        rate = float(rate)
        if not 0.0 <= rate < 1.0:
            raise ValidationError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None

    def out_dim(self, in_dim):
        return in_dim

    def forward(self, x, train, rng):
        if not train:
            self._mask = None
            return x
        keep = rng.random(x.shape) >= self.rate
        self._mask = keep / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask

    def spec(self):
        return {"kind": "dropout", "rate": self.rate}


class Softmax(Layer):
    """Row-wise softmax."""

    def __init__(self):
        self._p = None

    def out_dim(self, in_dim):
        return in_dim

    def forward(self, x, train, rng):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        self._p = e / e.sum(axis=1, keepdims=True)
        return self._p

    def backward(self, grad_out):
        if self._p is None:
            raise StateError("backward called before forward")
        inner = np.sum(grad_out * self._p, axis=1, keepdims=True)
        return self._p * (grad_out - inner)

    def spec(self):
        return {"kind": "softmax"}


class GaussianLatent(Layer):
    """Reparameterized Gaussian latent: input (mu, log sigma^2), output z.

    Takes a width-2d input interpreted as ``[mu | logvar]`` and emits
    z = mu + sigma * eps in train mode or z = mu in eval mode. The last
    (mu, logvar) pair stays available for KL terms; extra gradients for
    them are injected through :meth:`backward`'s optional arguments.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValidationError("latent dim must be positive")
        self.dim = int(dim)
        self.last_mu = None
        self.last_logvar = None
        self._sigma = None
        self._eps = None

    def out_dim(self, in_dim):
        if in_dim != 2 * self.dim:
            raise ValidationError(
                f"gaussian latent of dim {self.dim} expects input dim {2 * self.dim}, got {in_dim}"
            )
        return self.dim

    def forward(self, x, train, rng):
        self.last_mu = x[:, : self.dim]
        self.last_logvar = x[:, self.dim :]
        if train:
            self._sigma = np.exp(0.5 * self.last_logvar)
            self._eps = rng.standard_normal(self.last_mu.shape)
            return self.last_mu + self._sigma * self._eps
        self._sigma = None
        self._eps = None
        return self.last_mu.copy()

    def backward(self, grad_out, extra_mu=None, extra_logvar=None):
        if self.last_mu is None:
            raise StateError("backward called before forward")
        g_mu = grad_out.copy()
        if self._eps is not None:
            g_logvar = grad_out * (0.5 * self._sigma * self._eps)
        else:
            g_logvar = np.zeros_like(grad_out)
        if extra_mu is not None:
            g_mu += extra_mu
        if extra_logvar is not None:
            g_logvar += extra_logvar
        return np.hstack([g_mu, g_logvar])

    def spec(self):
        return {"kind": "gaussian_latent", "dim": self.dim}


def layer_from_spec(spec: dict) -> Layer:
    kind = spec.get("kind")
    if kind == "dense":
        return Dense(spec["in_dim"], spec["out_dim"])
    if kind == "prelu":
        return PReLU(spec["dim"], spec.get("init_slope", 0.25))
    if kind == "dropout":
        return Dropout(spec["rate"])
    if kind == "softmax":
        return Softmax()
    if kind == "gaussian_latent":
        return GaussianLatent(spec["dim"])
    raise ValidationError(f"unknown layer kind {kind!r}")
