"""Evaluation metrics: pixel L2, Fréchet feature distance, patch-wise
perceptual distance, and their average.

Features come from a small convnet with fixed seeded random weights. The
numbers are therefore internally consistent but not comparable with
scores computed on pretrained backbones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataError, DimensionError, NumericError
from .imagechip import ImageChip
from .tensor_core import Tensor, no_grad, ops

SYMMETRY_TOL = 1e-8


# ---------------------------------------------------------------------------
# feature extractor

class FeatureExtractor:
    """Three conv3x3 -> ReLU -> 2x2 average-pool stages, then global average
    pooling. Input is a batch of [0, 1] images; 1-channel images are
    replicated to 3 channels."""

    def __init__(self, seed: int = 0, dim: int = 64, in_channels: int = 3):
        if dim < 4:
            raise ConfigError(f"feature dimension must be >= 4, got {dim}")
        widths = [in_channels, max(dim // 4, 1), max(dim // 2, 1), dim]
        rng = np.random.default_rng([seed, 0x5EED])
        self.seed = seed
        self.dim = dim
        self.in_channels = in_channels
        self.weights = []
        for cin, cout in zip(widths[:-1], widths[1:]):
            std = math.sqrt(2.0 / (cin * 9))
            w = rng.normal(0.0, std, size=(cout, cin, 3, 3))
            b = rng.normal(0.0, 0.1, size=(cout,))
            self.weights.append((w, b))

    @property
    def min_tile(self) -> int:
        return 2 ** len(self.weights)

    def __call__(self, images: np.ndarray) -> np.ndarray:
        """(N, C, H, W) floats in [0, 1] -> (N, dim) features."""
        x = np.asarray(images, dtype=np.float64)
        if x.ndim != 4:
            raise DimensionError(f"expected (N, C, H, W), got {x.shape}")
        if x.shape[1] == 1 and self.in_channels == 3:
            x = np.repeat(x, 3, axis=1)
        if x.shape[1] != self.in_channels:
            raise DimensionError(f"extractor expects {self.in_channels} channels, got {x.shape[1]}")
        if x.shape[2] % self.min_tile or x.shape[3] % self.min_tile:
            raise ConfigError(f"image extents {x.shape[2:]} must be multiples of {self.min_tile}")
        with no_grad():
            t = Tensor(x)
            for w, b in self.weights:
                t = ops.avg_downsample2(ops.relu(ops.conv2d(t, w, b, 1, 1)))
        return t.data.mean(axis=(2, 3))


def _unit_stack(chips: Sequence[ImageChip]) -> np.ndarray:
    return np.stack([c.unit() for c in chips])


def extract_features(chips: Sequence[ImageChip], extractor: FeatureExtractor, batch_size: int = 32) -> np.ndarray:
    parts = [extractor(_unit_stack(chips[i:i + batch_size])) for i in range(0, len(chips), batch_size)]
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# L2

def _check_pairs(pred: Sequence[ImageChip], ref: Sequence[ImageChip]):
    if len(pred) != len(ref) or not pred:
        raise ContractError(f"need equal, nonzero image counts; got {len(pred)} and {len(ref)}")
    for a, b in zip(pred, ref):
        if a.shape != b.shape:
            raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")


def l2_metric(pred: Sequence[ImageChip], ref: Sequence[ImageChip]) -> float:
    """Mean over pairs of the per-pixel squared distance (summed over
    channels, pixels scaled to [0, 1]), averaged over pixels."""
    _check_pairs(pred, ref)
    per_pair = [((a.unit() - b.unit()) ** 2).sum(axis=0).mean() for a, b in zip(pred, ref)]
    return float(np.mean(per_pair))


# ---------------------------------------------------------------------------
# Fréchet distance

@dataclass(frozen=True, eq=False)
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int

    def __post_init__(self):
        d = self.mu.shape[0]
        if self.mu.ndim != 1 or self.sigma.shape != (d, d):
            raise DimensionError(f"mu {self.mu.shape} and sigma {self.sigma.shape} disagree")
        if self.n < 2:
            raise DataError(f"covariance needs n >= 2 samples, got {self.n}")
        if np.abs(self.sigma - self.sigma.T).max(initial=0.0) > SYMMETRY_TOL * max(1.0, np.abs(self.sigma).max()):
            raise NumericError("covariance is not symmetric")

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "FeatureStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise DataError(f"need at least 2 feature vectors, got shape {feats.shape}")
        mu = feats.mean(axis=0)
        centered = feats - mu
        sigma = centered.T @ centered / (feats.shape[0] - 1)
        return cls(mu, (sigma + sigma.T) / 2, feats.shape[0])


def compute_feature_stats(images: Sequence[ImageChip], extractor: FeatureExtractor) -> FeatureStats:
    if len(images) < 2:
        raise DataError(f"feature statistics need at least 2 images, got {len(images)}")
    return FeatureStats.from_features(extract_features(images, extractor))


def matrix_sqrt_psd(sigma: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root by eigendecomposition.

    Eigenvalues below d * eps * max|lambda| (including negative round-off)
    are set to zero.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise DimensionError(f"expected a square matrix, got {sigma.shape}")
    scale = max(1.0, float(np.abs(sigma).max(initial=0.0)))
    if np.abs(sigma - sigma.T).max(initial=0.0) > SYMMETRY_TOL * scale:
        raise NumericError("matrix is not symmetric within tolerance")
    vals, vecs = np.linalg.eigh((sigma + sigma.T) / 2)
    top = float(np.abs(vals).max(initial=0.0))
    if vals.size and vals.min() < -1e-8 * max(1.0, top):
        raise NumericError(f"matrix is not positive semidefinite (min eigenvalue {vals.min():.3e})")
    cutoff = sigma.shape[0] * np.finfo(np.float64).eps * top
    roots = np.sqrt(np.where(vals > cutoff, vals, 0.0))
    return (vecs * roots) @ vecs.T


def frechet_distance(real: FeatureStats, fake: FeatureStats) -> float:
    """||mu_r - mu_f||^2 + Tr(S_r + S_f - 2 (S_r S_f)^(1/2)), clamped at 0.

    The trace of the product root is taken from the symmetric form
    sqrt(S_r) S_f sqrt(S_r), which has the same eigenvalues as S_r S_f.
    """
    if real.mu.shape != fake.mu.shape:
        raise ContractError(f"feature dimensions differ: {real.mu.shape} vs {fake.mu.shape}")
    diff = real.mu - fake.mu
    root_r = matrix_sqrt_psd(real.sigma)
    middle = root_r @ fake.sigma @ root_r
    cross = np.trace(matrix_sqrt_psd((middle + middle.T) / 2))
    value = float(diff @ diff + np.trace(real.sigma) + np.trace(fake.sigma) - 2.0 * cross)
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# perceptual patch distance

def _tiles(x: np.ndarray, patches: int) -> np.ndarray:
    """(C, H, W) -> (patches^2, C, H/p, W/p), row-major tile order."""
    c, h, w = x.shape
    th, tw = h // patches, w // patches
    return x.reshape(c, patches, th, patches, tw).transpose(1, 3, 0, 2, 4).reshape(patches * patches, c, th, tw)


def perceptual_distance(a: ImageChip, b: ImageChip, extractor: FeatureExtractor, patches: int = 4) -> float:
    """Mean over a patches x patches tile grid of the squared Euclidean
    distance between tile features."""
    if a.shape != b.shape:
        raise ContractError(f"image shapes differ: {a.shape} vs {b.shape}")
    if patches < 1:
        raise ConfigError(f"patches must be >= 1, got {patches}")
    if a.height % patches or a.width % patches:
        raise ConfigError(f"{a.height}x{a.width} chip does not split into a {patches}x{patches} grid")
    fa = extractor(_tiles(a.unit(), patches))
    fb = extractor(_tiles(b.unit(), patches))
    return float(((fa - fb) ** 2).sum(axis=1).mean())


def perceptual_metric(pred: Sequence[ImageChip], ref: Sequence[ImageChip], extractor: FeatureExtractor,
                      patches: int = 4) -> float:
    _check_pairs(pred, ref)
    return float(np.mean([perceptual_distance(a, b, extractor, patches) for a, b in zip(pred, ref)]))


# ---------------------------------------------------------------------------
# aggregate

def final_score(l2: float, perceptual: float, frechet: float) -> float:
    values = (l2, perceptual, frechet)
    if not all(math.isfinite(v) for v in values) or min(values) < 0:
        raise ContractError(f"metrics must be finite and non-negative, got {values}")
    return (l2 + perceptual + frechet) / 3


@dataclass(frozen=True)
class MetricsReport:
    l2: float
    perceptual: float
    frechet: float
    final_score: float

    @classmethod
    def build(cls, l2: float, perceptual: float, frechet: float) -> "MetricsReport":
        return cls(l2, perceptual, frechet, final_score(l2, perceptual, frechet))

    def as_dict(self) -> dict:
        return {"l2": self.l2, "perceptual": self.perceptual, "frechet": self.frechet,
                "final_score": self.final_score}

    def to_text(self) -> str:
        """``key = value`` lines: full-precision values, then 2-decimal views."""
        items = self.as_dict()
        lines = [f"{k} = {v!r}" for k, v in items.items()]
        lines += [f"{k}_rounded = {v:.2f}" for k, v in items.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        values = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = (p.strip() for p in line.split("=", 1))
                values[k] = v
        return cls(*(float(values[k]) for k in ("l2", "perceptual", "frechet", "final_score")))


def evaluate(pred: Sequence[ImageChip], ref: Sequence[ImageChip], extractor: FeatureExtractor = None,
             patches: int = 4) -> MetricsReport:
    extractor = extractor or FeatureExtractor()
    _check_pairs(pred, ref)
    l2 = l2_metric(pred, ref)
    perceptual = perceptual_metric(pred, ref, extractor, patches)
    frechet = frechet_distance(compute_feature_stats(ref, extractor), compute_feature_stats(pred, extractor))
    return MetricsReport.build(l2, perceptual, frechet)
