"""Staged adversarial training and inference.

Stage A trains G1 (with its half-resolution head) against the
discriminators on half-resolution pairs. Stage B trains G2 with G1 frozen.
Stage C fine-tunes everything. Every step updates the discriminators once,
then the generator once.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import loss as losses
from .dataset import DatasetManifest, PairedSample
from .denoise import DenoiseConfig, median_filter
from .discriminator import DiscriminatorConfig, MultiScaleDiscriminator
from .errors import ConfigError, DataError, DimensionError
from .generator import CoarseToFineGenerator, GeneratorConfig
from .imagechip import ImageChip
from .tensor_core import Tensor, backward, no_grad, ops
from .tensor_core import checkpoint as ckpt_io
from .tensor_core.nn import Adam, frozen

log = logging.getLogger(__name__)

STAGES = ("A", "B", "C")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 1
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    stage_epochs: Tuple[int, int, int] = (5, 5, 17)
    lambda_fm: float = 10.0
    denoise: Optional[DenoiseConfig] = DenoiseConfig()
    resolution: int = 64
    gen: GeneratorConfig = None
    disc: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def __post_init__(self):
        epochs = tuple(int(e) for e in self.stage_epochs)
        if len(epochs) != 3 or min(epochs) < 0 or sum(epochs) == 0:
            raise ConfigError(f"stage_epochs needs three counts >= 0, not all zero; got {self.stage_epochs}")
        object.__setattr__(self, "stage_epochs", epochs)
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        gen = self.gen or GeneratorConfig(full_resolution=self.resolution)
        if gen.full_resolution != self.resolution:
            gen = dataclasses.replace(gen, full_resolution=self.resolution)
        object.__setattr__(self, "gen", gen)
        disc_in = gen.in_channels + gen.out_channels
        if self.disc.in_channels != disc_in:
            object.__setattr__(self, "disc", dataclasses.replace(self.disc, in_channels=disc_in))
        losses.LossWeights(self.lambda_fm)

    @property
    def weights(self) -> losses.LossWeights:
        return losses.LossWeights(self.lambda_fm)


@dataclass
class LossHistory:
    stage: List[int] = field(default_factory=list)
    g_loss: List[float] = field(default_factory=list)
    d_loss: List[float] = field(default_factory=list)

    def append(self, stage: str, g: float, d: float):
        self.stage.append(STAGES.index(stage))
        # stored as float32 so a checkpoint round-trip is exact
        self.g_loss.append(float(np.float32(g)))
        self.d_loss.append(float(np.float32(d)))

    def __len__(self):
        return len(self.g_loss)

    def as_arrays(self) -> Dict[str, np.ndarray]:
        return {
            "history/stage": np.asarray(self.stage, dtype=np.float32),
            "history/g_loss": np.asarray(self.g_loss, dtype=np.float32),
            "history/d_loss": np.asarray(self.d_loss, dtype=np.float32),
        }


@dataclass
class Checkpoint:
    generator: CoarseToFineGenerator
    discriminator: MultiScaleDiscriminator
    g_opt: Adam
    d_opt: Adam
    stage: str = "A"
    epoch: int = 0
    history: LossHistory = field(default_factory=LossHistory)
    denoise: Optional[DenoiseConfig] = None

    @property
    def resolution(self) -> int:
        return self.generator.config.full_resolution

    def to_tensors(self) -> Dict[str, np.ndarray]:
        g, d = self.generator.config, self.discriminator.config
        out: Dict[str, np.ndarray] = {
            "meta/gen_config": np.array([g.in_channels, g.out_channels, g.base_width, g.g1_res_blocks,
                                         g.g2_res_blocks, g.full_resolution], dtype=np.float32),
            "meta/disc_config": np.array([d.in_channels, d.base_width, d.layers, d.max_width], dtype=np.float32),
            "meta/stage": np.array([STAGES.index(self.stage)], dtype=np.float32),
            "meta/epoch": np.array([self.epoch], dtype=np.float32),
            "meta/denoise": np.array([0, 0] if self.denoise is None
                                     else [self.denoise.window_n, self.denoise.window_m], dtype=np.float32),
        }
        for prefix, opt in (("opt/g", self.g_opt), ("opt/d", self.d_opt)):
            out[f"{prefix}/hyper"] = np.array([opt.lr, opt.beta1, opt.beta2, opt.eps], dtype=np.float32)
            for name, st in opt.state.items():
                out[f"{prefix}/{name}/m"] = st["m"]
                out[f"{prefix}/{name}/v"] = st["v"]
                out[f"{prefix}/{name}/t"] = np.array([st["t"]], dtype=np.float32)
        for name, p in self.generator.named_parameters():
            out[f"gen/{name}"] = p.data
        for name, p in self.discriminator.named_parameters():
            out[f"disc/{name}"] = p.data
        out.update(self.history.as_arrays())
        return out

    @classmethod
    def from_tensors(cls, t: Dict[str, np.ndarray]) -> "Checkpoint":
        try:
            gi = [int(v) for v in t["meta/gen_config"]]
            di = [int(v) for v in t["meta/disc_config"]]
            gen = CoarseToFineGenerator(GeneratorConfig(*gi))
            disc = MultiScaleDiscriminator(DiscriminatorConfig(*di))
            gen.load_arrays({k[4:]: v for k, v in t.items() if k.startswith("gen/")})
            disc.load_arrays({k[5:]: v for k, v in t.items() if k.startswith("disc/")})
            opts = []
            for prefix in ("opt/g", "opt/d"):
                lr, b1, b2, eps = (float(v) for v in t[f"{prefix}/hyper"])
                opt = Adam(lr, b1, b2, eps)
                names = sorted({k[len(prefix) + 1:-2] for k in t if k.startswith(prefix + "/") and k.endswith("/m")},
                               key=lambda n: list(t).index(f"{prefix}/{n}/m"))
                for name in names:
                    opt.state[name] = {"m": t[f"{prefix}/{name}/m"].copy(), "v": t[f"{prefix}/{name}/v"].copy(),
                                       "t": int(t[f"{prefix}/{name}/t"][0])}
                opts.append(opt)
            n, m = (int(v) for v in t["meta/denoise"])
            history = LossHistory([int(v) for v in t["history/stage"]], [float(v) for v in t["history/g_loss"]],
                                  [float(v) for v in t["history/d_loss"]])
            return cls(gen, disc, opts[0], opts[1], STAGES[int(t["meta/stage"][0])], int(t["meta/epoch"][0]),
                       history, DenoiseConfig(n, m) if n else None)
        except KeyError as exc:
            raise DataError(f"checkpoint is missing {exc}") from None

    def save(self, path):
        ckpt_io.save_tensors(path, self.to_tensors())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_tensors(ckpt_io.load_tensors(path))

    def to_bytes(self) -> bytes:
        return ckpt_io.dumps(self.to_tensors())


# ---------------------------------------------------------------------------
# data preparation

def prepare_sar(chip: ImageChip, denoise: Optional[DenoiseConfig]) -> np.ndarray:
    """SAR chip -> normalized (1, H, W) float32, median-filtered when enabled."""
    if denoise is not None:
        chip = median_filter(chip, denoise)
    return chip.normalized()


def _training_samples(dataset) -> List[PairedSample]:
    if isinstance(dataset, DatasetManifest):
        samples = dataset.subset("train")
    else:
        samples = list(dataset)
    if not samples:
        raise DataError("training set is empty")
    return samples


def _stack(samples: Sequence[PairedSample], cfg: TrainConfig) -> Tuple[np.ndarray, np.ndarray]:
    for s in samples:
        if s.sar.height != cfg.resolution or s.sar.width != cfg.resolution:
            raise DimensionError(
                f"sample {s.id} is {s.sar.height}x{s.sar.width}, training resolution is {cfg.resolution}"
            )
    sar = np.stack([prepare_sar(s.sar, cfg.denoise) for s in samples])
    eo = np.stack([s.eo.normalized() for s in samples])
    return sar, eo


def _logits(outs):
    return [logits for _, logits in outs]


def _feats(outs):
    return [feats for feats, _ in outs]


class Trainer:
    """Holds networks and optimizers; ``run`` executes the staged schedule.

    ``probe(stage, generator_input)`` sees every SAR array handed to the
    generator; ``on_stage_end(stage, trainer)`` fires after each stage.
    """

    def __init__(self, cfg: TrainConfig, probe: Optional[Callable] = None,
                 on_stage_end: Optional[Callable] = None):
        self.cfg = cfg
        self.generator = CoarseToFineGenerator(cfg.gen, seed=cfg.seed)
        self.discriminator = MultiScaleDiscriminator(cfg.disc, seed=cfg.seed)
        self.g_opt = Adam(cfg.lr, cfg.beta1, cfg.beta2)
        self.d_opt = Adam(cfg.lr, cfg.beta1, cfg.beta2)
        self.history = LossHistory()
        self.probe = probe
        self.on_stage_end = on_stage_end
        self.stage = "A"
        self.epoch = 0

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.generator, self.discriminator, self.g_opt, self.d_opt, self.stage,
                          self.epoch, self.history, self.cfg.denoise)

    def _d_update(self, sar, real, fake):
        self.discriminator.zero_grad()
        real_out = self.discriminator.forward_all(sar, real)
        fake_out = self.discriminator.forward_all(sar, fake.detach())
        d_loss = losses.gan_loss_discriminator(_logits(real_out), _logits(fake_out))
        backward(d_loss)
        self.d_opt.step(self.discriminator.parameters())
        return d_loss.item()

    def _g_update(self, sar, real, fake, trainable: str):
        with frozen(self.discriminator):
            with no_grad():
                real_out = self.discriminator.forward_all(sar, real)
            fake_out = self.discriminator.forward_all(sar, fake)
        g_loss = losses.total_generator_loss(_logits(fake_out), _feats(real_out), _feats(fake_out),
                                             self.cfg.weights)
        self.generator.zero_grad()
        backward(g_loss)
        # full dotted names keep optimizer state keys unique across g1/g2
        params = {k: p for k, p in self.generator.parameters().items() if k.startswith(trainable)}
        self.g_opt.step(params)
        return g_loss.item()

    def step(self, stage: str, sar: np.ndarray, eo: np.ndarray) -> Tuple[float, float]:
        gen = self.generator
        if stage == "A":
            with no_grad():
                sar_in = ops.avg_downsample2(Tensor(sar))
                real = ops.avg_downsample2(Tensor(eo))
            if self.probe is not None:
                self.probe(stage, sar)
            fake, _ = gen.forward_g1(sar_in)
            trainable = "g1."
        else:
            sar_in, real = Tensor(sar), Tensor(eo)
            if self.probe is not None:
                self.probe(stage, sar)
            if stage == "B":
                with frozen(gen.g1):
                    fake = gen.forward_full(sar_in)
                trainable = "g2."
            else:
                fake = gen.forward_full(sar_in)
                trainable = ""
        d = self._d_update(sar_in, real, fake)
        g = self._g_update(sar_in, real, fake, trainable)
        return g, d

    def run(self, dataset) -> Checkpoint:
        cfg = self.cfg
        samples = _training_samples(dataset)
        sar, eo = _stack(samples, cfg)
        n = len(samples)
        rng = np.random.default_rng(cfg.seed)
        for stage, epochs in zip(STAGES, cfg.stage_epochs):
            if epochs == 0:
                continue
            self.stage = stage
            for epoch in range(epochs):
                self.epoch = epoch
                order = rng.permutation(n)
                for start in range(0, n, cfg.batch_size):
                    idx = np.sort(order[start:start + cfg.batch_size])
                    g, d = self.step(stage, sar[idx], eo[idx])
                    self.history.append(stage, g, d)
                log.debug("stage %s epoch %d: g=%.4f d=%.4f", stage, epoch, g, d)
            if self.on_stage_end is not None:
                self.on_stage_end(stage, self)
        return self.checkpoint()


def train(dataset, cfg: TrainConfig = TrainConfig(), **hooks) -> Checkpoint:
    return Trainer(cfg, **hooks).run(dataset)


# ---------------------------------------------------------------------------
# inference

_FROM_CHECKPOINT = object()


def translate_batch(checkpoint: Checkpoint, chips: Sequence[ImageChip], denoise_cfg=_FROM_CHECKPOINT,
                    batch_size: int = 8) -> List[ImageChip]:
    if denoise_cfg is _FROM_CHECKPOINT:
        denoise_cfg = checkpoint.denoise
    res = checkpoint.resolution
    for chip in chips:
        if chip.channels != 1 or chip.height != res or chip.width != res:
            raise DimensionError(f"expected 1x{res}x{res} SAR chip, got {'x'.join(map(str, chip.shape))}")
    out = []
    with no_grad():
        for start in range(0, len(chips), batch_size):
            batch = np.stack([prepare_sar(c, denoise_cfg) for c in chips[start:start + batch_size]])
            y = checkpoint.generator.forward_full(Tensor(batch)).data
            out.extend(ImageChip.from_normalized(img) for img in y)
    return out


def translate(checkpoint: Checkpoint, sar_chip: ImageChip, denoise_cfg=_FROM_CHECKPOINT) -> ImageChip:
    """Denoise (if enabled), normalize, run the full generator, return 8-bit EO.

    ``denoise_cfg`` defaults to the checkpoint's training setting; pass
    ``None`` to disable filtering.
    """
    return translate_batch(checkpoint, [sar_chip], denoise_cfg)[0]
