"""Multi-scale conditional patch discriminators.

Each scale sees the channel concatenation of the SAR condition and a
candidate EO image. Scale k works on inputs average-downsampled by
2^(k-1); the three discriminators share topology but not weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .generator import layer_rng_factory
from .tensor_core import Tensor, ops
from .tensor_core.nn import Conv2d, Module

NUM_SCALES = 3
KERNEL = 4
PAD = 2
SLOPE = 0.2


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 4  # SAR (1) + EO (3)
    base_width: int = 16
    layers: int = 4  # T: feature-producing layers before the logit head
    max_width: int = 512

    def __post_init__(self):
        if self.layers < 2:
            raise ConfigError(f"discriminator needs at least 2 feature layers, got {self.layers}")
        if self.base_width < 1 or self.in_channels < 1:
            raise ConfigError("discriminator widths must be positive")

    def widths(self) -> List[int]:
        return [min(self.base_width * 2 ** i, self.max_width) for i in range(self.layers)]


class PatchDiscriminator(Module):
    """T stride-2 4x4 convs (leaky ReLU 0.2, instance norm after all but the
    first) followed by a stride-1 4x4 conv to one logit channel."""

    def __init__(self, cfg: DiscriminatorConfig, rng_for, prefix: str, dtype=np.float32):
        widths = cfg.widths()
        cin = cfg.in_channels
        self.layers = []
        for i, w in enumerate(widths):
            self.layers.append(Conv2d(cin, w, KERNEL, 2, PAD, rng=rng_for(f"{prefix}.layers.{i}"), dtype=dtype))
            cin = w
        self.head = Conv2d(cin, 1, KERNEL, 1, PAD, rng=rng_for(f"{prefix}.head"), dtype=dtype)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def logit_size(self, size: int) -> int:
        for layer in self.layers:
            size = layer.out_size(size)
        return self.head.out_size(size)

    def __call__(self, x: Tensor) -> Tuple[List[Tensor], Tensor]:
        feats = []
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i > 0:
                x = ops.instance_norm(x)
            x = ops.leaky_relu(x, SLOPE)
            feats.append(x)
        return feats, self.head(x)


class MultiScaleDiscriminator(Module):
    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(), seed: int = 1, dtype=np.float32):
        self._cfg = cfg
        self._dtype = np.dtype(dtype)
        rng_for = layer_rng_factory(seed)
        self.d1 = PatchDiscriminator(cfg, rng_for, "d1", dtype)
        self.d2 = PatchDiscriminator(cfg, rng_for, "d2", dtype)
        self.d3 = PatchDiscriminator(cfg, rng_for, "d3", dtype)

    @property
    def config(self) -> DiscriminatorConfig:
        return self._cfg

    @property
    def scales(self) -> List[PatchDiscriminator]:
        return [self.d1, self.d2, self.d3]

    def forward_scale(self, k: int, sar, image) -> Tuple[List[Tensor], Tensor]:
        """Run discriminator ``k`` (1-based) on an already-downsampled pair."""
        if k not in (1, 2, 3):
            raise ContractError(f"scale index must be 1..3, got {k}")
        sar, image = _as(sar, self._dtype), _as(image, self._dtype)
        if sar.ndim != 4 or image.ndim != 4 or sar.shape[0] != image.shape[0] or sar.shape[2:] != image.shape[2:]:
            raise DimensionError(f"condition {sar.shape} and image {image.shape} disagree")
        if sar.shape[1] + image.shape[1] != self._cfg.in_channels:
            raise DimensionError(
                f"pair has {sar.shape[1] + image.shape[1]} channels, discriminator expects {self._cfg.in_channels}"
            )
        return self.scales[k - 1](ops.concat([sar, image], axis=1))

    def pyramid(self, x) -> List[Tensor]:
        """[x, down(x), down(down(x))]"""
        x = _as(x, self._dtype)
        out = [x]
        for _ in range(NUM_SCALES - 1):
            out.append(ops.avg_downsample2(out[-1]))
        return out

    def forward_all(self, sar_full, image_full) -> List[Tuple[List[Tensor], Tensor]]:
        sar_full, image_full = _as(sar_full, self._dtype), _as(image_full, self._dtype)
        for t in (sar_full, image_full):
            if t.ndim != 4 or t.shape[2] % 4 or t.shape[3] % 4:
                raise DimensionError(f"multi-scale input extents must be divisible by 4, got {t.shape}")
        sars, images = self.pyramid(sar_full), self.pyramid(image_full)
        return [self.forward_scale(k + 1, s, x) for k, (s, x) in enumerate(zip(sars, images))]


def _as(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))
