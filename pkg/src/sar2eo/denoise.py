"""Median-filter denoising of SAR chips, plus synthetic noise models.

The production filter is Huang's running-histogram median: per row, a
256-bin histogram of the window is updated column by column and the median
is tracked through a running count of values below it, so each step costs
O(n) histogram updates plus a short walk instead of a full sort.

Only pixels whose whole n x m neighbourhood lies inside the image are
filtered; the border band of width n//2 (rows) and m//2 (columns) keeps its
input value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, ContractError, DataError, DimensionError
from .imagechip import ImageChip

BORDER_POLICIES = ("copy_input",)


@dataclass(frozen=True)
class DenoiseConfig:
    window_n: int = 3
    window_m: int = 3
    border_policy: str = "copy_input"

    def __post_init__(self):
        for name in ("window_n", "window_m"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1 or v % 2 == 0:
                raise ConfigError(f"{name} must be an odd integer >= 1, got {v!r}")
        if self.border_policy not in BORDER_POLICIES:
            raise ConfigError(f"unknown border policy {self.border_policy!r}")

    @classmethod
    def parse(cls, text: str) -> "DenoiseConfig":
        """Parse ``"NxM"`` (rows x cols)."""
        try:
            n, m = (int(p) for p in text.lower().split("x"))
        except ValueError:
            raise ConfigError(f"window must look like 3x3, got {text!r}") from None
        return cls(n, m)

    def __str__(self):
        return f"{self.window_n}x{self.window_m}"


@njit(cache=False, nogil=True)
def _histogram_median(img, n, m):
    h, w = img.shape
    out = img.copy()
    rn = n // 2
    rm = m // 2
    half = (n * m) // 2
    hist = np.zeros(256, dtype=np.int32)
    for i in range(rn, h - rn):
        hist[:] = 0
        for r in range(i - rn, i + rn + 1):
            for c in range(m):
                hist[img[r, c]] += 1
        med = 0
        below = 0  # number of window values strictly less than med
        while below + hist[med] <= half:
            below += hist[med]
            med += 1
        out[i, rm] = med
        for j in range(rm + 1, w - rm):
            left = j - rm - 1
            right = j + rm
            for r in range(i - rn, i + rn + 1):
                v = img[r, left]
                hist[v] -= 1
                if v < med:
                    below -= 1
                v = img[r, right]
                hist[v] += 1
                if v < med:
                    below += 1
            if below > half:
                while below > half:
                    med -= 1
                    below -= hist[med]
            else:
                while below + hist[med] <= half:
                    below += hist[med]
                    med += 1
            out[i, j] = med
    return out


def median_filter_naive(arr: np.ndarray, n: int, m: int) -> np.ndarray:
    """Reference filter: sort every full window. Slow; kept as the oracle."""
    h, w = arr.shape
    out = arr.copy()
    rn, rm = n // 2, m // 2
    k = (n * m) // 2
    for i in range(rn, h - rn):
        for j in range(rm, w - rm):
            window = arr[i - rn:i + rn + 1, j - rm:j + rm + 1]
            out[i, j] = np.sort(window, axis=None)[k]
    return out


def median_filter_array(arr: np.ndarray, n: int, m: int, method: str = "histogram") -> np.ndarray:
    """Median-filter a 2-D uint8 array with an n x m (rows x cols) window."""
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ContractError(f"expected 2-D uint8 array, got {arr.dtype} {arr.shape}")
    DenoiseConfig(n, m)
    if n > arr.shape[0] or m > arr.shape[1]:
        raise DimensionError(f"window {n}x{m} does not fit image {arr.shape[0]}x{arr.shape[1]}")
    if method == "histogram":
        return _histogram_median(np.ascontiguousarray(arr), n, m)
    if method == "naive":
        return median_filter_naive(arr, n, m)
    raise ConfigError(f"unknown median method {method!r}")


def median_filter(image: ImageChip, cfg: DenoiseConfig = DenoiseConfig()) -> ImageChip:
    """Filter a single-channel chip; see ``median_filter_channels`` for RGB."""
    if image.channels != 1:
        raise ContractError(f"median_filter takes single-channel chips, got {image.channels} channels")
    return ImageChip(median_filter_array(image.pixels[0], cfg.window_n, cfg.window_m)[None])


def median_filter_channels(image: ImageChip, cfg: DenoiseConfig = DenoiseConfig()) -> ImageChip:
    planes = [median_filter_array(image.pixels[c], cfg.window_n, cfg.window_m) for c in range(image.channels)]
    return ImageChip(np.stack(planes))


# ---------------------------------------------------------------------------
# noise models

def add_speckle(image: ImageChip, strength: float, seed: int) -> ImageChip:
    """Multiplicative noise: p * (1 + strength * u), u ~ U[-1, 1], rounded and clipped."""
    if not 0.0 <= strength <= 1.0:
        raise ConfigError(f"speckle strength must be in [0, 1], got {strength}")
    if strength == 0:
        return ImageChip(image.pixels.copy())
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=image.shape)
    noisy = image.pixels.astype(np.float64) * (1.0 + strength * u)
    return ImageChip(np.clip(np.rint(noisy), 0, 255).astype(np.uint8))


def add_salt_pepper(image: ImageChip, density: float, seed: int) -> ImageChip:
    """Set exactly round(density * H * W) pixel positions to 0 or 255 (all channels)."""
    if not 0.0 <= density <= 1.0:
        raise ConfigError(f"salt-and-pepper density must be in [0, 1], got {density}")
    px = image.pixels.copy()
    hw = image.height * image.width
    count = int(round(density * hw))
    rng = np.random.default_rng(seed)
    idx = rng.choice(hw, size=count, replace=False)
    values = np.where(rng.random(count) < 0.5, 0, 255).astype(np.uint8)
    flat = px.reshape(image.channels, hw)
    flat[:, idx] = values
    return ImageChip(px)


def restoration_rate(clean: ImageChip, noisy: ImageChip, filtered: ImageChip, tolerance: int = 2) -> float:
    """Fraction of corrupted pixels (noisy != clean) brought back within
    ``tolerance`` gray levels of the clean value."""
    if not clean.shape == noisy.shape == filtered.shape:
        raise DimensionError(f"shape mismatch {clean.shape} / {noisy.shape} / {filtered.shape}")
    c = clean.pixels.astype(np.int32)
    corrupted = noisy.pixels.astype(np.int32) != c
    total = int(corrupted.sum())
    if total == 0:
        raise DataError("no corrupted pixels; restoration rate is undefined")
    restored = np.abs(filtered.pixels.astype(np.int32) - c) <= tolerance
    return float((restored & corrupted).sum() / total)
