"""Minimal reverse-mode autodiff over numpy arrays."""

from .tensor import Tape, Tensor, as_tensor, backward, is_grad_enabled, no_grad
from .ops import (
    add, avg_downsample2, concat, conv2d, conv_transpose2d, instance_norm, l1_loss,
    leaky_relu, mean, mse_loss, mul, relu, scale, sub, sum, tanh,
)
from .nn import Adam, Conv2d, ConvTranspose2d, Module, ResidualBlock, adam_step, frozen, residual_block

__all__ = [
    "Tape", "Tensor", "as_tensor", "backward", "is_grad_enabled", "no_grad",
    "add", "avg_downsample2", "concat", "conv2d", "conv_transpose2d", "instance_norm", "l1_loss",
    "leaky_relu", "mean", "mse_loss", "mul", "relu", "scale", "sub", "sum", "tanh",
    "Adam", "Conv2d", "ConvTranspose2d", "Module", "ResidualBlock", "adam_step", "frozen", "residual_block",
]
