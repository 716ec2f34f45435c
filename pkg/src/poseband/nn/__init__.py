"""Minimal differentiable network engine: layers, losses, Adam."""

from .layers import Dense, Dropout, GaussianLatent, Layer, PReLU, Softmax, layer_from_spec
from .losses import (
    cal_obj,
    cal_obj_grad,
    cal_obj_per_bound,
    cal_obj_per_bound_grad,
    comcal_loss,
    cross_entropy_grad,
    cross_entropy_loss,
    interval_score_grads,
    interval_score_loss,
    kl_grads,
    kl_loss,
    mse_grad,
    mse_loss,
    pinball_grad,
    pinball_loss,
    sharp_obj,
    sharp_obj_grads,
)
from .network import Network, backward, forward
from .optim import Adam, AdamState, adam_step

__all__ = [
    "Adam",
    "AdamState",
    "Dense",
    "Dropout",
    "GaussianLatent",
    "Layer",
    "Network",
    "PReLU",
    "Softmax",
    "adam_step",
    "backward",
    "cal_obj",
    "cal_obj_grad",
    "cal_obj_per_bound",
    "cal_obj_per_bound_grad",
    "comcal_loss",
    "cross_entropy_grad",
    "cross_entropy_loss",
    "forward",
    "interval_score_grads",
    "interval_score_loss",
    "kl_grads",
    "kl_loss",
    "layer_from_spec",
    "mse_grad",
    "mse_loss",
    "pinball_grad",
    "pinball_loss",
    "sharp_obj",
    "sharp_obj_grads",
]
