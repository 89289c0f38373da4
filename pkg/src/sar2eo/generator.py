"""Coarse-to-fine generator: a global generator G1 at half resolution and a
local enhancer G2 at full resolution, joined by an element-wise feature sum.

Topology (widths for base width B):

    G1:  conv7x7(B) -> conv3x3/2(2B) -> conv3x3/2(4B)      front
         residual blocks at 4B                              res
         convT3x3/2(2B) -> convT3x3/2(B)                    back  -> last_feat
         conv7x7(out) + tanh                                head (stage-A only)
    G2:  conv7x7(B/2) -> conv3x3/2(B)                      front
         (+ last_feat of G1)
         residual blocks at B                               res
         convT3x3/2(B/2) -> conv7x7(out) + tanh             back

Every conv except the heads is followed by instance norm and ReLU.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor_core import Tensor, ops
from .tensor_core.nn import Conv2d, ConvTranspose2d, Module, ResidualBlock


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 1
    out_channels: int = 3
    base_width: int = 16
    g1_res_blocks: int = 3
    g2_res_blocks: int = 2
    full_resolution: int = 128

    def __post_init__(self):
        if self.full_resolution % 4:
            raise ConfigError(f"full_resolution must be divisible by 4, got {self.full_resolution}")
        if self.base_width < 4 or self.base_width % 2:
            raise ConfigError(f"base_width must be even and >= 4, got {self.base_width}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.g1_res_blocks < 0 or self.g2_res_blocks < 0:
            raise ConfigError("residual block counts must be >= 0")

    @property
    def half_resolution(self) -> int:
        return self.full_resolution // 2


def _norm_relu(x):
    return ops.relu(ops.instance_norm(x))


class _Stack(Module):
    """Conv-like layers each followed by instance norm + ReLU."""

    def __init__(self, layers):
        self.layers = list(layers)

    def out_size(self, size: int) -> int:
        for layer in self.layers:
            size = layer.out_size(size)
        return size

    def __call__(self, x):
        for layer in self.layers:
            x = _norm_relu(layer(x))
        return x


class _ResStack(Module):
    def __init__(self, blocks):
        self.blocks = list(blocks)

    def __call__(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class GlobalGenerator(Module):
    def __init__(self, cfg: GeneratorConfig, rng_for, dtype):
        b = cfg.base_width
        self.front = _Stack([
            Conv2d(cfg.in_channels, b, 7, 1, 3, rng=rng_for("g1.front.0"), dtype=dtype),
            Conv2d(b, 2 * b, 3, 2, 1, rng=rng_for("g1.front.1"), dtype=dtype),
            Conv2d(2 * b, 4 * b, 3, 2, 1, rng=rng_for("g1.front.2"), dtype=dtype),
        ])
        self.res = _ResStack([ResidualBlock(4 * b, rng=rng_for(f"g1.res.{i}"), dtype=dtype)
                              for i in range(cfg.g1_res_blocks)])
        self.back = _Stack([
            ConvTranspose2d(4 * b, 2 * b, 3, 2, 1, 1, rng=rng_for("g1.back.0"), dtype=dtype),
            ConvTranspose2d(2 * b, b, 3, 2, 1, 1, rng=rng_for("g1.back.1"), dtype=dtype),
        ])
        self.head = Conv2d(b, cfg.out_channels, 7, 1, 3, rng=rng_for("g1.head"), dtype=dtype)

    def features(self, x):
        return self.back(self.res(self.front(x)))


class LocalEnhancer(Module):
    def __init__(self, cfg: GeneratorConfig, rng_for, dtype):
        b = cfg.base_width
        self.front = _Stack([
            Conv2d(cfg.in_channels, b // 2, 7, 1, 3, rng=rng_for("g2.front.0"), dtype=dtype),
            Conv2d(b // 2, b, 3, 2, 1, rng=rng_for("g2.front.1"), dtype=dtype),
        ])
        self.res = _ResStack([ResidualBlock(b, rng=rng_for(f"g2.res.{i}"), dtype=dtype)
                              for i in range(cfg.g2_res_blocks)])
        self.back = _Stack([
            ConvTranspose2d(b, b // 2, 3, 2, 1, 1, rng=rng_for("g2.back.0"), dtype=dtype),
        ])
        self.head = Conv2d(b // 2, cfg.out_channels, 7, 1, 3, rng=rng_for("g2.head"), dtype=dtype)


def layer_rng_factory(seed: int):
    """Per-layer generators keyed by layer name, so adding a layer never
    shifts another layer's initial weights."""

    def rng_for(name: str) -> np.random.Generator:
        key = [seed] + list(name.encode("utf-8"))
        return np.random.default_rng(key)

    return rng_for


class CoarseToFineGenerator(Module):
    """G = {G1, G2}. ``g1`` and ``g2`` hold the six sub-components plus the
    two tanh heads."""

    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), seed: int = 0, dtype=np.float32):
        self._cfg = cfg
        self._dtype = np.dtype(dtype)
        rng_for = layer_rng_factory(seed)
        self.g1 = GlobalGenerator(cfg, rng_for, dtype)
        self.g2 = LocalEnhancer(cfg, rng_for, dtype)
        self._check_fusion()

    @property
    def config(self) -> GeneratorConfig:
        return self._cfg

    @property
    def dtype(self):
        return self._dtype

    def fusion_shapes(self) -> Tuple[tuple, tuple]:
        """(channels, h, w) of G2's front output and of G1's last feature map."""
        cfg = self._cfg
        g1_front = self.g1.front.out_size(cfg.half_resolution)
        g1_back = self.g1.back.out_size(g1_front)
        g2_front = self.g2.front.out_size(cfg.full_resolution)
        c1 = self.g1.back.layers[-1].out_channels
        c2 = self.g2.front.layers[-1].out_channels
        return (c2, g2_front, g2_front), (c1, g1_back, g1_back)

    def _check_fusion(self):
        a, b = self.fusion_shapes()
        if a != b:
            raise ConfigError(
                f"feature fusion impossible at resolution {self._cfg.full_resolution}: "
                f"G2 front gives {a}, G1 back gives {b}"
            )

    def _check_input(self, x: Tensor, size: int, what: str):
        if x.ndim != 4 or x.shape[1] != self._cfg.in_channels or x.shape[2:] != (size, size):
            raise DimensionError(
                f"{what}: expected (N, {self._cfg.in_channels}, {size}, {size}), got {x.shape}"
            )

    def forward_g1(self, sar_half) -> Tuple[Tensor, Tensor]:
        """Global generator on a half-resolution input.

        Returns the tanh image at half resolution and the last feature map
        of G1's back-end (the tensor fused into G2).
        """
        sar_half = _as_input(sar_half, self._dtype)
        self._check_input(sar_half, self._cfg.half_resolution, "forward_g1")
        feat = self.g1.features(sar_half)
        image = ops.tanh(self.g1.head(feat))
        return image, feat

    def g1_features(self, sar_half) -> Tensor:
        sar_half = _as_input(sar_half, self._dtype)
        self._check_input(sar_half, self._cfg.half_resolution, "g1_features")
        return self.g1.features(sar_half)

    def fused_features(self, sar_full) -> Tensor:
        """Input to G2's residual blocks: g2_front(x) + last_feat(G1(down(x)))."""
        sar_full = _as_input(sar_full, self._dtype)
        self._check_input(sar_full, self._cfg.full_resolution, "forward_full")
        last_feat = self.g1.features(ops.avg_downsample2(sar_full))
        return ops.add(self.g2.front(sar_full), last_feat)

    def forward_full(self, sar_full) -> Tensor:
        fused = self.fused_features(sar_full)
        h = self.g2.back(self.g2.res(fused))
        return ops.tanh(self.g2.head(h))

    __call__ = forward_full


def _as_input(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))
