"""Plain-text run configuration.

Flat ``key = value`` lines under ``[gen]``, ``[disc]``, ``[loss]``,
``[train]`` and ``[denoise]`` headers::

    [gen]
    base_width = 16
    resolution = 64

    [train]
    stage_epochs = 5, 5, 17

    [denoise]
    enabled = true
    window = 3x3

Unknown sections or keys are errors. Missing keys keep their defaults.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple

from .denoise import DenoiseConfig
from .errors import ConfigError
from .generator import GeneratorConfig
from .trainer import TrainConfig

GAN_MODE_ALIASES = {"lsgan": "least_squares", "least_squares": "least_squares"}


def _int(text: str) -> int:
    return int(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _triple(text: str) -> Tuple[int, int, int]:
    parts = tuple(int(p) for p in text.replace(",", " ").split())
    if len(parts) != 3:
        raise ValueError(f"expected three integers, got {text!r}")
    return parts


def _gan_mode(text: str) -> str:
    try:
        return GAN_MODE_ALIASES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"unsupported gan_mode {text!r}") from None


SCHEMA: Dict[str, Dict[str, Callable[[str], object]]] = {
    "gen": {"base_width": _int, "g1_res_blocks": _int, "g2_res_blocks": _int, "resolution": _int},
    "disc": {"base_width": _int, "layers": _int},
    "loss": {"lambda_fm": float, "gan_mode": _gan_mode},
    "train": {"seed": _int, "batch_size": _int, "lr": float, "beta1": float, "beta2": float,
              "stage_epochs": _triple},
    "denoise": {"enabled": _bool, "window": DenoiseConfig.parse},
}


@dataclass
class RunConfig:
    """Every section as a dict of typed values, with defaults filled in."""

    values: Dict[str, Dict[str, object]] = field(default_factory=lambda: {s: {} for s in SCHEMA})

    def get(self, section: str, key: str, default=None):
        return self.values[section].get(key, default)

    def set(self, section: str, key: str, value):
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        if value is not None:
            self.values[section][key] = value

    def train_config(self) -> TrainConfig:
        base = TrainConfig()
        resolution = self.get("gen", "resolution", base.resolution)
        gen = GeneratorConfig(
            base_width=self.get("gen", "base_width", base.gen.base_width),
            g1_res_blocks=self.get("gen", "g1_res_blocks", base.gen.g1_res_blocks),
            g2_res_blocks=self.get("gen", "g2_res_blocks", base.gen.g2_res_blocks),
            full_resolution=resolution,
        )
        disc = dataclasses.replace(
            base.disc,
            base_width=self.get("disc", "base_width", base.disc.base_width),
            layers=self.get("disc", "layers", base.disc.layers),
        )
        denoise: Optional[DenoiseConfig] = None
        if self.get("denoise", "enabled", True):
            denoise = self.get("denoise", "window", DenoiseConfig())
        return TrainConfig(
            seed=self.get("train", "seed", base.seed),
            batch_size=self.get("train", "batch_size", base.batch_size),
            lr=self.get("train", "lr", base.lr),
            beta1=self.get("train", "beta1", base.beta1),
            beta2=self.get("train", "beta2", base.beta2),
            stage_epochs=self.get("train", "stage_epochs", base.stage_epochs),
            lambda_fm=self.get("loss", "lambda_fm", base.lambda_fm),
            denoise=denoise,
            resolution=resolution,
            gen=gen,
            disc=disc,
        )


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), default_section="\x00unused")
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc.message.splitlines()[0]}") from None
    cfg = RunConfig()
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"{source}: unknown key {section}.{key}")
            try:
                value = SCHEMA[section][key](raw)
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{source}: bad value for {section}.{key}: {exc}") from None
            cfg.set(section, key, value)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
