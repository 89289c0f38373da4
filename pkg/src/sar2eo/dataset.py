"""Paired SAR/EO chips: directory loading, splitting and a synthetic generator.

On disk a dataset is ``<root>/sar/<id>.png`` (8-bit grayscale) next to
``<root>/eo/<id>.png`` (8-bit RGB); pairs are matched by basename. An
optional ``manifest.tsv`` holds ``id<TAB>split`` lines.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from .denoise import add_speckle
from .errors import ConfigError, DataError, DimensionError, PairingError
from .imagechip import ImageChip, read_png, write_png

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.tsv"


@dataclass(frozen=True, eq=False)
class PairedSample:
    id: str
    sar: ImageChip
    eo: ImageChip
    split: str = "train"

    def __post_init__(self):
        if self.sar.channels != 1:
            raise DimensionError(f"sample {self.id}: SAR must be single-channel, got {self.sar.channels}")
        if self.eo.channels != 3:
            raise DimensionError(f"sample {self.id}: EO must have 3 channels, got {self.eo.channels}")
        if self.sar.shape[1:] != self.eo.shape[1:]:
            raise DimensionError(f"sample {self.id}: SAR {self.sar.shape[1:]} and EO {self.eo.shape[1:]} differ")
        if self.split not in SPLITS:
            raise ConfigError(f"unknown split {self.split!r}")

    def __eq__(self, other):
        if not isinstance(other, PairedSample):
            return NotImplemented
        return (self.id, self.split) == (other.id, other.split) and self.sar == other.sar and self.eo == other.eo

    __hash__ = None


@dataclass(frozen=True)
class DatasetManifest:
    root: Optional[Path]
    samples: Tuple[PairedSample, ...]
    resolution: int

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate sample ids in manifest")

    def __len__(self):
        return len(self.samples)

    @property
    def ids(self) -> List[str]:
        return [s.id for s in self.samples]

    @property
    def counts(self) -> Dict[str, int]:
        out = {k: 0 for k in SPLITS}
        for s in self.samples:
            out[s.split] += 1
        return out

    def subset(self, split: str) -> List[PairedSample]:
        return [s for s in self.samples if s.split == split]


def _check_resolution(chip: ImageChip, resolution: int, what: str):
    if chip.height != resolution or chip.width != resolution:
        raise DimensionError(f"{what}: expected {resolution}x{resolution}, got {chip.height}x{chip.width}")


def load_paired(root, resolution: int) -> DatasetManifest:
    """Pair ``sar/<id>.png`` with ``eo/<id>.png``; samples sorted by id.

    Splits come from ``manifest.tsv`` when present, else every sample is
    ``train``.
    """
    root = Path(root)
    sar_dir, eo_dir = root / "sar", root / "eo"
    if not sar_dir.is_dir() or not eo_dir.is_dir():
        raise DataError(f"{root} must contain sar/ and eo/ directories")
    sar_ids = {p.stem for p in sar_dir.glob("*.png")}
    eo_ids = {p.stem for p in eo_dir.glob("*.png")}
    orphans = sorted(sar_ids ^ eo_ids)
    if orphans:
        detail = ", ".join(f"{i} (only {'sar' if i in sar_ids else 'eo'})" for i in orphans)
        raise PairingError(f"unpaired files: {detail}", orphans)
    if not sar_ids:
        raise DataError(f"no PNG pairs under {root}")
    splits = _read_split_file(root / MANIFEST_NAME) if (root / MANIFEST_NAME).exists() else {}
    samples = []
    for sid in sorted(sar_ids):
        sar = read_png(sar_dir / f"{sid}.png")
        eo = read_png(eo_dir / f"{sid}.png")
        _check_resolution(sar, resolution, f"sar/{sid}.png")
        _check_resolution(eo, resolution, f"eo/{sid}.png")
        samples.append(PairedSample(sid, sar, eo, splits.get(sid, "train")))
    return DatasetManifest(root, tuple(samples), resolution)


def _read_split_file(path) -> Dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in SPLITS:
            raise DataError(f"{path}:{lineno}: expected 'id<TAB>split', got {line!r}")
        out[parts[0]] = parts[1]
    return out


def save_manifest(manifest: DatasetManifest, path):
    Path(path).write_text("".join(f"{s.id}\t{s.split}\n" for s in manifest.samples))


def load_manifest(path, root, resolution: int) -> DatasetManifest:
    """Reload chips from ``root`` and apply the splits listed in ``path``."""
    splits = _read_split_file(path)
    loaded = load_paired(root, resolution)
    missing = sorted(set(splits) ^ set(loaded.ids))
    if missing:
        raise PairingError(f"manifest and directory disagree on ids: {', '.join(missing)}", missing)
    return dataclasses.replace(
        loaded, samples=tuple(dataclasses.replace(s, split=splits[s.id]) for s in loaded.samples)
    )


def write_paired(samples: Sequence[PairedSample], out_dir, with_manifest: bool = True):
    out = Path(out_dir)
    (out / "sar").mkdir(parents=True, exist_ok=True)
    (out / "eo").mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_png(out / "sar" / f"{s.id}.png", s.sar)
        write_png(out / "eo" / f"{s.id}.png", s.eo)
    if with_manifest:
        (out / MANIFEST_NAME).write_text("".join(f"{s.id}\t{s.split}\n" for s in samples))


def split_manifest(manifest: DatasetManifest, val_fraction: float, seed: int, merge: bool = False) -> DatasetManifest:
    """Seeded train/val assignment; ``merge`` labels everything ``train``."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(manifest)
    val = set()
    if not merge:
        n_val = int(round(n * val_fraction))
        order = np.random.default_rng(seed).permutation(n)
        val = {int(i) for i in order[:n_val]}
    samples = tuple(
        dataclasses.replace(s, split="val" if i in val else "train") for i, s in enumerate(manifest.samples)
    )
    return dataclasses.replace(manifest, samples=samples)


# ---------------------------------------------------------------------------
# synthetic data

LUMA = np.array([0.299, 0.587, 0.114])
_BLUR = np.array([1.0, 2.0, 1.0]) / 4.0


def luminance(eo: ImageChip) -> np.ndarray:
    return np.tensordot(LUMA, eo.pixels.astype(np.float64), axes=1)


def contrast_remap(lum: np.ndarray) -> np.ndarray:
    """Monotone radar-like response: dark floor, compressed shadows."""
    return np.clip(np.rint(20.0 + 215.0 * (lum / 255.0) ** 1.5), 0, 255).astype(np.uint8)


def light_blur(px: np.ndarray) -> np.ndarray:
    """Separable [1 2 1]/4 binomial blur with edge replication, per plane."""
    f = px.astype(np.float64)
    p = np.pad(f, ((0, 0), (1, 1), (0, 0)), mode="edge")
    f = _BLUR[0] * p[:, :-2] + _BLUR[1] * p[:, 1:-1] + _BLUR[2] * p[:, 2:]
    p = np.pad(f, ((0, 0), (0, 0), (1, 1)), mode="edge")
    f = _BLUR[0] * p[:, :, :-2] + _BLUR[1] * p[:, :, 1:-1] + _BLUR[2] * p[:, :, 2:]
    return np.clip(np.rint(f), 0, 255).astype(np.uint8)


def sar_from_eo(eo: ImageChip, speckle_strength: float, seed: int) -> ImageChip:
    clean = ImageChip(contrast_remap(luminance(eo))[None])
    noisy = add_speckle(clean, speckle_strength, seed)
    return ImageChip(light_blur(noisy.pixels))


# Land-cover-like palette with well separated luminance (about 37 to 239).
# Every chip is a shaded field with objects in the other classes. The
# generator normalizes its activations per image, which discards a chip's
# absolute SAR level; a shared ground class keeps object classes
# identifiable from their contrast against the field.
PALETTE = np.array([
    (20, 35, 90),     # water
    (30, 85, 45),     # forest
    (180, 60, 45),    # roof
    (80, 150, 60),    # field
    (190, 140, 90),   # soil
    (120, 190, 220),  # glass / shallow water
    (230, 200, 120),  # sand
    (240, 240, 235),  # concrete
], dtype=np.float64)
GROUND = 3
COLOR_JITTER = 12.0
SHADING = 0.15


def _polygon(rng: np.random.Generator, res: int) -> List[Tuple[float, float]]:
    cx, cy = rng.uniform(0.15 * res, 0.85 * res, size=2)
    radius = rng.uniform(0.12, 0.3) * res
    count = int(rng.integers(3, 7))
    angles = np.sort(rng.uniform(0, 2 * math.pi, size=count))
    radii = radius * rng.uniform(0.6, 1.0, size=count)
    return [(float(cx + r * math.cos(a)), float(cy + r * math.sin(a))) for a, r in zip(angles, radii)]


def _jittered(rng: np.random.Generator, index: int) -> np.ndarray:
    return np.clip(PALETTE[index] + rng.uniform(-COLOR_JITTER, COLOR_JITTER, size=3), 0, 255)


def synth_eo(rng: np.random.Generator, resolution: int) -> ImageChip:
    """Field ground with a linear brightness ramp (+-SHADING/2) and 2-5
    filled polygons, each in a distinct non-ground palette class."""
    ground = _jittered(rng, GROUND)
    theta = rng.uniform(0, 2 * math.pi)
    yy, xx = np.mgrid[0:resolution, 0:resolution] / max(resolution - 1, 1)
    ramp = math.cos(theta) * (xx - 0.5) + math.sin(theta) * (yy - 0.5)
    bg = ground[:, None, None] * (1.0 + SHADING * ramp[None])
    img = Image.fromarray(np.clip(np.rint(bg), 0, 255).astype(np.uint8).transpose(1, 2, 0))
    draw = ImageDraw.Draw(img)
    classes = [int(i) for i in rng.permutation(len(PALETTE)) if i != GROUND]
    for index in classes[:int(rng.integers(2, 6))]:
        color = tuple(int(round(v)) for v in _jittered(rng, index))
        draw.polygon(_polygon(rng, resolution), fill=color)
    return ImageChip.from_array(np.asarray(img))


def synth_paired(n: int, resolution: int, seed: int, speckle_strength: float = 0.3) -> List[PairedSample]:
    """Deterministic SAR/EO surrogate pairs.

    SAR = light_blur(speckle(contrast_remap(luminance(EO)))).
    """
    if n < 1:
        raise ConfigError(f"need at least one sample, got {n}")
    if resolution < 8 or resolution % 4:
        raise ConfigError(f"resolution must be a multiple of 4 and >= 8, got {resolution}")
    samples = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        eo = synth_eo(rng, resolution)
        sar = sar_from_eo(eo, speckle_strength, int(rng.integers(2 ** 31)))
        samples.append(PairedSample(f"{i:05d}", sar, eo))
    return samples


def synth_manifest(n: int, resolution: int, seed: int, speckle_strength: float = 0.3,
                   val_fraction: Optional[float] = None) -> DatasetManifest:
    manifest = DatasetManifest(None, tuple(synth_paired(n, resolution, seed, speckle_strength)), resolution)
    if val_fraction is not None:
        manifest = split_manifest(manifest, val_fraction, seed)
    return manifest
