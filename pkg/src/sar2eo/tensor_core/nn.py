"""Parameter containers, layers and the Adam optimizer."""

from __future__ import annotations

import contextlib
from typing import Dict, Iterator, Tuple

import numpy as np

from . import ops
from .tensor import Tensor

INIT_STD = 0.02


class Module:
    """Walks its attributes (tensors, sub-modules, lists of sub-modules) to
    enumerate parameters with dotted names in definition order."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def load_arrays(self, arrays: Dict[str, np.ndarray], prefix: str = ""):
        params = self.parameters()
        for name, p in params.items():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"missing parameter {key!r}")
            arr = arrays[key]
            if arr.shape != p.shape:
                raise ValueError(f"parameter {key!r}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)


def gaussian_param(shape, rng: np.random.Generator, dtype, std: float = INIT_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin, cout, k, stride=1, pad=0, *, rng, dtype=np.float32):
        self.weight = gaussian_param((cout, cin, k, k), rng, dtype)
        self.bias = zeros_param((cout,), dtype)
        self._stride = stride
        self._pad = pad

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    def out_size(self, size: int) -> int:
        return ops.conv_output_size(size, self.weight.shape[2], self._stride, self._pad)

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, self._stride, self._pad)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, k, stride=1, pad=0, output_padding=0, *, rng, dtype=np.float32):
        self.weight = gaussian_param((cin, cout, k, k), rng, dtype)
        self.bias = zeros_param((cout,), dtype)
        self._stride = stride
        self._pad = pad
        self._output_padding = output_padding

    @property
    def out_channels(self) -> int:
        return self.weight.shape[1]

    def out_size(self, size: int) -> int:
        return ops.conv_transpose_output_size(size, self.weight.shape[2], self._stride, self._pad,
                                              self._output_padding)

    def __call__(self, x):
        return ops.conv_transpose2d(x, self.weight, self.bias, self._stride, self._pad,
                                    self._output_padding)


def residual_block(x, params: Dict[str, Tensor], eps: float = 1e-5) -> Tensor:
    """x + IN(conv(relu(IN(conv(x))))) with 3x3 zero-padded convolutions.

    ``params`` holds ``conv1.weight``, ``conv1.bias``, ``conv2.weight``,
    ``conv2.bias``.
    """
    h = ops.conv2d(x, params["conv1.weight"], params["conv1.bias"], 1, 1)
    h = ops.relu(ops.instance_norm(h, eps))
    h = ops.conv2d(h, params["conv2.weight"], params["conv2.bias"], 1, 1)
    h = ops.instance_norm(h, eps)
    return ops.add(x, h)


class ResidualBlock(Module):
    def __init__(self, channels, *, rng, dtype=np.float32):
        self.conv1 = Conv2d(channels, channels, 3, 1, 1, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, 1, 1, rng=rng, dtype=dtype)

    def __call__(self, x):
        return residual_block(x, self.parameters())


@contextlib.contextmanager
def frozen(*modules: Module):
    """Treat the modules' parameters as constants inside the block.

    Gradients still flow *through* the modules to their inputs.
    """
    params = [p for m in modules for p in m.parameters().values()]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def adam_step(params: Dict[str, Tensor], grads: Dict[str, np.ndarray], state: Dict[str, dict],
              lr: float, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update applied in place.

    ``state[name]`` holds ``m``, ``v`` and the per-parameter step count ``t``;
    it is created on first use. Parameters absent from ``grads`` are untouched.
    """
    for name, g in grads.items():
        p = params[name]
        st = state.get(name)
        if st is None:
            st = state[name] = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": 0}
        dt = p.data.dtype.type
        st["t"] += 1
        t = st["t"]
        st["m"] = dt(beta1) * st["m"] + dt(1 - beta1) * g
        st["v"] = dt(beta2) * st["v"] + dt(1 - beta2) * (g * g)
        m_hat = st["m"] / dt(1 - beta1 ** t)
        v_hat = st["v"] / dt(1 - beta2 ** t)
        p.data = p.data - dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))


class Adam:
    def __init__(self, lr: float = 2e-4, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state: Dict[str, dict] = {}

    def step(self, params: Dict[str, Tensor]):
        """Update every parameter in ``params`` that currently holds a gradient."""
        grads = {name: p.grad for name, p in params.items() if p.grad is not None}
        adam_step(params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
