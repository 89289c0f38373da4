"""Denoising ablation: the same training run with the median filter off
(``base``) and on (``+denoise``), scored on the held-out split."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import List, Tuple

from .dataset import DatasetManifest
from .denoise import DenoiseConfig
from .errors import DataError
from .metrics import FeatureExtractor, MetricsReport, evaluate
from .trainer import TrainConfig, train, translate_batch

LABELS = ("base", "+denoise")
COLUMNS = ("l2", "perceptual", "frechet", "final_score")


@dataclass(frozen=True)
class AblationReport:
    rows: Tuple[Tuple[str, MetricsReport], ...]

    def __getitem__(self, label: str) -> MetricsReport:
        for name, report in self.rows:
            if name == label:
                return report
        raise KeyError(label)

    @property
    def labels(self) -> List[str]:
        return [name for name, _ in self.rows]

    def to_text(self) -> str:
        """Tab-separated table: a header, then one full-precision row per run."""
        lines = ["\t".join(("run",) + COLUMNS)]
        for name, report in self.rows:
            values = report.as_dict()
            lines.append("\t".join([name] + [repr(values[c]) for c in COLUMNS]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AblationReport":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or lines[0].split("\t") != ["run", *COLUMNS]:
            raise DataError("not an ablation report")
        rows = []
        for ln in lines[1:]:
            name, *vals = ln.split("\t")
            rows.append((name, MetricsReport(*(float(v) for v in vals))))
        return cls(tuple(rows))


def run_ablation(manifest: DatasetManifest, cfg: TrainConfig = TrainConfig(),
                 extractor: FeatureExtractor = None) -> AblationReport:
    """Train twice from ``cfg.seed``, denoising off then on, and evaluate
    each checkpoint on ``manifest``'s ``val`` samples."""
    held_out = manifest.subset("val")
    if len(held_out) < 2:
        raise DataError(f"ablation needs at least 2 validation samples, got {len(held_out)}")
    extractor = extractor or FeatureExtractor(seed=cfg.seed)
    window = cfg.denoise or DenoiseConfig()
    rows = []
    for label, denoise in zip(LABELS, (None, window)):
        run_cfg = dataclasses.replace(cfg, denoise=denoise)
        ckpt = train(manifest, run_cfg)
        outputs = translate_batch(ckpt, [s.sar for s in held_out])
        rows.append((label, evaluate(outputs, [s.eo for s in held_out], extractor)))
    return AblationReport(tuple(rows))
