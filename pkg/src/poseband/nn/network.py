"""Sequential network over a single flat parameter vector."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidInput, StateError
from ..rng import stream
from .layers import GaussianLatent, Layer, layer_from_spec

MODES = ("train", "eval")


class Network:
    """Ordered layers sharing one flat parameter vector with per-layer views.

    ``forward`` caches activations for exactly one subsequent ``backward``;
    gradients land in the flat ``grads`` vector (same layout as ``params``).
    """

    def __init__(self, layers: list[Layer], in_dim: int, seed: int = 0):
        self.layers = list(layers)
        self.in_dim = int(in_dim)
        dim = self.in_dim
        for layer in self.layers:
            dim = layer.out_dim(dim)
        self.out_dim = dim
        total = sum(layer.param_count for layer in self.layers)
        self.params = np.zeros(total)
        self.grads = np.zeros(total)
        offset = 0
        for layer in self.layers:
            k = layer.param_count
            layer.bind(self.params[offset : offset + k], self.grads[offset : offset + k])
            offset += k
        self.seed = int(seed)
        for i, layer in enumerate(self.layers):
            layer.init_params(stream(self.seed, "init", i))
        self._forward_done = False
        self.last_output = None
        self.last_input_grad = None

    @property
    def n_params(self) -> int:
        return int(self.params.size)

    def forward(self, x: np.ndarray, train: bool = True, seed: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise InvalidInput(
                f"batch must have shape (n, {self.in_dim}), got {x.shape}"
            )
        rng = stream(seed, "forward")
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        self._forward_done = True
        self.last_output = x
        return x

    def backward(self, grad_out: np.ndarray, latent_grad=None) -> np.ndarray:
        """Backpropagate; returns the flat parameter gradient vector.

        ``latent_grad`` is an optional (d_mu, d_logvar) pair injected at the
        gaussian latent layer (for KL-style losses on the latent stats).
        The gradient with respect to the network input is left in
        ``last_input_grad``.
        """
        if not self._forward_done:
            raise StateError("backward called before forward")
        grad_out = np.asarray(grad_out, dtype=float)
        self.grads[:] = 0.0
        g = grad_out
        for layer in reversed(self.layers):
            if isinstance(layer, GaussianLatent) and latent_grad is not None:
                g = layer.backward(g, *latent_grad)
                latent_grad = None
            else:
                g = layer.backward(g)
        self.last_input_grad = g
        return self.grads

    @property
    def latent_layer(self) -> GaussianLatent | None:
        for layer in self.layers:
            if isinstance(layer, GaussianLatent):
                return layer
        return None

    @property
    def latent_mu(self):
        layer = self.latent_layer
        return None if layer is None else layer.last_mu

    @property
    def latent_logvar(self):
        layer = self.latent_layer
        return None if layer is None else layer.last_logvar

    def layer_specs(self) -> list[dict]:
        return [layer.spec() for layer in self.layers]

    def to_meta(self) -> dict:
        return {"in_dim": self.in_dim, "seed": self.seed, "layers": self.layer_specs()}

    @classmethod
    def from_meta(cls, meta: dict, params: np.ndarray | None = None) -> "Network":
        net = cls(
            [layer_from_spec(s) for s in meta["layers"]],
            in_dim=meta["in_dim"],
            seed=meta.get("seed", 0),
        )
        if params is not None:
            if params.shape != net.params.shape:
                raise InvalidInput(
                    f"parameter vector of size {params.size} does not match specs"
                )
            net.params[:] = params
        return net


def forward(net: Network, batch, mode: str = "eval", seed: int = 0) -> np.ndarray:
    """Functional forward pass; ``mode`` is "train" or "eval"."""
    if mode not in MODES:
        raise InvalidInput(f"mode must be one of {MODES}, got {mode!r}")
    return net.forward(batch, train=(mode == "train"), seed=seed)


def backward(net: Network, grad_out, latent_grad=None) -> np.ndarray:
    """Functional backward pass; returns the flat parameter gradient."""
    return net.backward(grad_out, latent_grad=latent_grad)
