"""Feature-matching and least-squares adversarial losses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor_core import Tensor, ops

GAN_MODES = ("least_squares",)


@dataclass(frozen=True)
class LossWeights:
    lambda_fm: float = 10.0
    gan_mode: str = "least_squares"

    def __post_init__(self):
        if not math.isfinite(self.lambda_fm) or self.lambda_fm < 0:
            raise ConfigError(f"lambda_fm must be finite and >= 0, got {self.lambda_fm}")
        if self.gan_mode not in GAN_MODES:
            raise ConfigError(f"unsupported gan_mode {self.gan_mode!r}")


def feature_matching_loss(real_feats: Sequence[Tensor], fake_feats: Sequence[Tensor]) -> Tensor:
    """sum_i (1 / N_i) * || real_i - fake_i ||_1, N_i = element count of layer i.

    Real features are detached: no gradient reaches the discriminator
    through the real branch.
    """
    if len(real_feats) != len(fake_feats) or not real_feats:
        raise DimensionError(f"feature lists differ in length: {len(real_feats)} vs {len(fake_feats)}")
    total = None
    for real, fake in zip(real_feats, fake_feats):
        if real.shape != fake.shape:
            raise DimensionError(f"feature shapes differ: {real.shape} vs {fake.shape}")
        # l1_loss is the mean absolute gap, i.e. ||.||_1 / N_i
        term = ops.l1_loss(fake, real.detach())
        total = term if total is None else ops.add(total, term)
    return total


def _lsgan(logits: Tensor, target: float) -> Tensor:
    return ops.mse_loss(logits, Tensor(np.full(logits.shape, target, dtype=logits.dtype)))


def _check_scales(*groups):
    counts = {len(g) for g in groups}
    if len(counts) != 1 or 0 in counts:
        raise ContractError(f"per-scale inputs disagree in scale count: {[len(g) for g in groups]}")


def gan_loss_discriminator(real_logits: Sequence[Tensor], fake_logits: Sequence[Tensor]) -> Tensor:
    """sum_k mean (real_k - 1)^2 + mean fake_k^2.

    ``fake_logits`` must come from generator output that was detached
    before entering the discriminator.
    """
    _check_scales(real_logits, fake_logits)
    total = None
    for real, fake in zip(real_logits, fake_logits):
        term = ops.add(_lsgan(real, 1.0), _lsgan(fake, 0.0))
        total = term if total is None else ops.add(total, term)
    return total


def gan_loss_generator(fake_logits: Sequence[Tensor]) -> Tensor:
    total = None
    for fake in fake_logits:
        term = _lsgan(fake, 1.0)
        total = term if total is None else ops.add(total, term)
    return total


def total_generator_loss(fake_logits: Sequence[Tensor], real_feats: Sequence[List[Tensor]],
                         fake_feats: Sequence[List[Tensor]], weights: LossWeights = LossWeights()) -> Tensor:
    """sum_k mean (fake_k - 1)^2 + lambda_fm * sum_k FM_k.

    Run the discriminators under ``frozen`` when computing the inputs, so
    their parameters receive no gradient from this loss.
    """
    _check_scales(fake_logits, real_feats, fake_feats)
    adv = gan_loss_generator(fake_logits)
    if weights.lambda_fm == 0:
        return adv
    fm = None
    for real, fake in zip(real_feats, fake_feats):
        term = feature_matching_loss(real, fake)
        fm = term if fm is None else ops.add(fm, term)
    return ops.add(adv, ops.scale(fm, weights.lambda_fm))
