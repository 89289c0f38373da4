"""8-bit image chips and PNG I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, DataError


@dataclass(frozen=True, eq=False)
class ImageChip:
    """A 1- or 3-channel uint8 raster stored channel-first, shape (C, H, W)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.dtype != np.uint8:
            raise ContractError(f"ImageChip needs uint8 pixels, got {px.dtype}")
        if px.ndim != 3 or px.shape[0] not in (1, 3):
            raise ContractError(f"ImageChip needs shape (1|3, H, W), got {px.shape}")

    @classmethod
    def from_array(cls, arr) -> "ImageChip":
        """Accepts (H, W), (H, W, C) or (C, H, W) uint8-compatible arrays."""
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[None]
        elif arr.ndim == 3 and arr.shape[0] not in (1, 3) and arr.shape[2] in (1, 3):
            arr = arr.transpose(2, 0, 1)
        if arr.dtype != np.uint8:
            if arr.min() < 0 or arr.max() > 255:
                raise ContractError("pixel values outside [0, 255]")
            arr = np.rint(arr).astype(np.uint8)
        return cls(np.ascontiguousarray(arr))

    @classmethod
    def from_normalized(cls, arr) -> "ImageChip":
        """Inverse of ``normalized``: [-1, 1] floats to rounded, clipped uint8."""
        arr = np.asarray(arr, dtype=np.float64)
        px = np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
        return cls(px)

    @property
    def channels(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple:
        return self.pixels.shape

    def normalized(self, dtype=np.float32) -> np.ndarray:
        """Pixels mapped linearly from [0, 255] to [-1, 1]."""
        return (self.pixels.astype(dtype) / dtype(127.5) - dtype(1.0)).astype(dtype)

    def unit(self) -> np.ndarray:
        """Pixels scaled to [0, 1] as float64."""
        return self.pixels.astype(np.float64) / 255.0

    def to_rgb(self) -> "ImageChip":
        if self.channels == 3:
            return self
        return ImageChip(np.repeat(self.pixels, 3, axis=0))

    def channel(self, c: int) -> "ImageChip":
        return ImageChip(self.pixels[c:c + 1].copy())

    def __eq__(self, other):
        if not isinstance(other, ImageChip):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    __hash__ = None


def read_png(path) -> ImageChip:
    path = Path(path)
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode not in ("L", "RGB"):
                img = img.convert("RGB" if img.mode in ("RGBA", "P", "CMYK") else "L")
            arr = np.asarray(img)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None
    return ImageChip.from_array(arr)


def write_png(path, chip: ImageChip):
    px = chip.pixels
    arr = px[0] if chip.channels == 1 else np.ascontiguousarray(px.transpose(1, 2, 0))
    img = Image.fromarray(arr)
    # fixed compression settings keep the bytes reproducible
    img.save(Path(path), format="PNG", optimize=False, compress_level=6)
