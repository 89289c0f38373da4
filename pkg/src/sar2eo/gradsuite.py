"""Finite-difference checks for the assembled networks and the generator
objective, on top of the per-op suite in ``tensor_core.gradcheck``.

Networks are built in float64 with small widths. Training init (std 0.02)
makes pre-norm activations tiny, so a weight perturbation of 1e-4 moves
normalized units by ~1e-3 and flips ReLUs; the composites are therefore
re-drawn with variance-preserving weights and checked with a 1e-5 step.
"""

from __future__ import annotations

from typing import List

import numpy as np

from .discriminator import DiscriminatorConfig, MultiScaleDiscriminator
from .generator import CoarseToFineGenerator, GeneratorConfig
from .loss import LossWeights, total_generator_loss
from .tensor_core import Tensor, no_grad
from .tensor_core.gradcheck import GradCheckResult, check_gradients, op_suite, projected
from .tensor_core.nn import frozen


NETWORK_STEP = 1e-5


def _leaf(arr) -> Tensor:
    return Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


def _redraw(module, seed: int):
    """Weights ~ N(0, 1 / fan_in), biases ~ N(0, 0.1^2), deterministic in seed."""
    rng = np.random.default_rng([seed, 0xC0DE])
    for name, p in sorted(module.named_parameters()):
        if p.ndim == 1:
            p.data[...] = rng.normal(0.0, 0.1, size=p.shape)
        else:
            # conv (Cout, Cin, k, k) and transposed conv (Cin, Cout, k, k)
            # both see fan-in = channels * k * k
            fan_in = p.shape[1] * p.shape[2] * p.shape[3]
            p.data[...] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=p.shape)
    return module


def _small_generator(resolution: int, seed: int) -> CoarseToFineGenerator:
    cfg = GeneratorConfig(base_width=4, g1_res_blocks=1, g2_res_blocks=1, full_resolution=resolution)
    return _redraw(CoarseToFineGenerator(cfg, seed=seed, dtype=np.float64), seed)


def g1_case(rng: np.random.Generator, seed: int = 0) -> GradCheckResult:
    """G1 with its stage-A head on a 16x16 half-resolution input."""
    gen = _small_generator(32, seed)
    x = _leaf(rng.normal(size=(1, 1, 16, 16)))
    f = lambda: gen.forward_g1(x)[0]  # noqa: E731
    p = projected(f(), rng)
    params = {k: v for k, v in gen.parameters().items() if k.startswith("g1.")}
    return check_gradients("G1 16x16", lambda: p(f()), {"x": x, **params}, rng, step=NETWORK_STEP)


def generator_case(rng: np.random.Generator, seed: int = 0) -> GradCheckResult:
    gen = _small_generator(16, seed)
    x = _leaf(rng.normal(size=(1, 1, 16, 16)))
    f = lambda: gen.forward_full(x)  # noqa: E731
    p = projected(f(), rng)
    return check_gradients("full G 16x16", lambda: p(f()), {"x": x, **gen.parameters()}, rng, step=NETWORK_STEP)


def _small_discriminator(seed: int) -> MultiScaleDiscriminator:
    return _redraw(MultiScaleDiscriminator(DiscriminatorConfig(base_width=4), seed=seed, dtype=np.float64), seed)


def discriminator_case(rng: np.random.Generator, seed: int = 0) -> GradCheckResult:
    """Scale-1 discriminator; every feature map and the logits feed the scalar."""
    disc = _small_discriminator(seed)
    sar = _leaf(rng.normal(size=(1, 1, 16, 16)))
    img = _leaf(rng.normal(size=(1, 3, 16, 16)))
    feats, logits = disc.forward_scale(1, sar, img)
    projections = [projected(t, rng) for t in feats + [logits]]

    def f():
        outs = disc.forward_scale(1, sar, img)
        total = None
        for proj, t in zip(projections, outs[0] + [outs[1]]):
            term = proj(t)
            total = term if total is None else total + term
        return total

    params = {k: v for k, v in disc.parameters().items() if k.startswith("d1.")}
    return check_gradients("discriminator scale 1 16x16", f, {"sar": sar, "img": img, **params}, rng, step=NETWORK_STEP)


def generator_loss_case(rng: np.random.Generator, seed: int = 0) -> GradCheckResult:
    """Adversarial + feature-matching objective w.r.t. the generated image,
    with the discriminators frozen."""
    disc = _small_discriminator(seed)
    sar = Tensor(rng.normal(size=(1, 1, 16, 16)))
    real = Tensor(rng.normal(size=(1, 3, 16, 16)))
    fake = _leaf(rng.normal(size=(1, 3, 16, 16)))
    with no_grad():
        real_out = disc.forward_all(sar, real)
    weights = LossWeights()

    def f():
        with frozen(disc):
            fake_out = disc.forward_all(sar, fake)
        return total_generator_loss([lg for _, lg in fake_out], [ft for ft, _ in real_out],
                                    [ft for ft, _ in fake_out], weights)

    return check_gradients("total generator loss 16x16", f, {"fake": fake}, rng, step=NETWORK_STEP)


def network_suite(seed: int = 0) -> List[GradCheckResult]:
    rng = np.random.default_rng(seed)
    return [g1_case(rng, seed), generator_case(rng, seed), discriminator_case(rng, seed),
            generator_loss_case(rng, seed)]


def full_suite(seed: int = 0) -> List[GradCheckResult]:
    """Every primitive plus the composite networks."""
    return op_suite(seed) + network_suite(seed)
