"""``sar2eo`` command-line entry point.

Subcommands: synth-data, denoise, train, translate, evaluate, gradcheck,
grid, ablation. Exit status is 0 on success, 1 on a domain error (one
``error: <Kind>: <message>`` line on stderr) and 2 on a usage error.

``SAR2EO_THREADS`` caps BLAS threads (default 1, which keeps runs
bit-reproducible).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .ablation import run_ablation
from .config import RunConfig, load_config
from .dataset import load_paired, split_manifest, synth_manifest, write_paired
from .denoise import DenoiseConfig, median_filter_channels
from .errors import ConfigError, DataError, PairingError, Sar2EoError
from .gradsuite import full_suite
from .imagechip import ImageChip, read_png, write_png
from .metrics import FeatureExtractor, evaluate
from .trainer import Checkpoint, train, translate_batch

THREADS_ENV = "SAR2EO_THREADS"
GRID_GUTTER = 2


def _window(text: str) -> DenoiseConfig:
    try:
        return DenoiseConfig.parse(text)
    except ConfigError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _epochs(text: str):
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        parts = ()
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}")
    return parts


def _png_map(directory) -> Dict[str, Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory} is not a directory")
    return {p.stem: p for p in sorted(directory.glob("*.png"))}


def _matched(a: Dict[str, Path], b: Dict[str, Path], what: str) -> List[str]:
    orphans = sorted(set(a) ^ set(b))
    if orphans:
        raise PairingError(f"{what}: ids present on one side only: {', '.join(orphans)}", orphans)
    if not a:
        raise DataError(f"{what}: no PNG files")
    return sorted(a)


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth_data(args) -> int:
    manifest = synth_manifest(args.n, args.res, args.seed, args.speckle,
                              val_fraction=args.val_fraction if args.val_fraction > 0 else None)
    write_paired(manifest.samples, args.out)
    counts = manifest.counts
    print(f"wrote {len(manifest)} pairs to {args.out} (train {counts['train']}, val {counts['val']})")
    return 0


def cmd_denoise(args) -> int:
    chip = read_png(args.inp)
    write_png(args.out, median_filter_channels(chip, args.window))
    print(f"{args.inp} -> {args.out} ({args.window} median)")
    return 0


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg.set("train", "seed", args.seed)
    cfg.set("train", "stage_epochs", args.stage_epochs)
    cfg.set("train", "lr", args.lr)
    cfg.set("train", "batch_size", args.batch_size)
    cfg.set("loss", "lambda_fm", args.lambda_fm)
    cfg.set("gen", "resolution", args.resolution)
    cfg.set("denoise", "window", args.window)
    if args.no_denoise:
        cfg.set("denoise", "enabled", False)
    return cfg


def cmd_train(args) -> int:
    cfg = _run_config(args).train_config()
    manifest = load_paired(args.data, cfg.resolution)
    start = time.perf_counter()
    ckpt = train(manifest, cfg)
    ckpt.save(args.out)
    h = ckpt.history
    print(f"trained {len(h)} steps in {time.perf_counter() - start:.1f}s; "
          f"final g_loss {h.g_loss[-1]:.4f} d_loss {h.d_loss[-1]:.4f}; saved {args.out}")
    return 0


def cmd_translate(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    denoise = None if args.no_denoise else (args.window or ckpt.denoise)
    src = Path(args.inp)
    if src.is_dir():
        inputs = _png_map(src)
        if not inputs:
            raise DataError(f"{src}: no PNG files")
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        ids = list(inputs)
        outputs = translate_batch(ckpt, [read_png(inputs[i]) for i in ids], denoise)
        for sid, chip in zip(ids, outputs):
            write_png(out_dir / f"{sid}.png", chip)
        print(f"translated {len(ids)} chips into {out_dir}")
    else:
        chip = translate_batch(ckpt, [read_png(src)], denoise)[0]
        write_png(args.out, chip)
        print(f"{src} -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    pred, ref = _png_map(args.pred), _png_map(args.ref)
    ids = _matched(pred, ref, "evaluate")
    report = evaluate([read_png(pred[i]) for i in ids], [read_png(ref[i]) for i in ids],
                      FeatureExtractor(seed=args.seed), patches=args.patches)
    text = report.to_text()
    Path(args.report).write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    results = full_suite(args.seed)
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:<40} max_rel_err={r.max_rel_err:.3e} ({r.coords_checked} coords)")
    worst = max(r.max_rel_err for r in results)
    failed = [r for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} passed; worst {worst:.3e}")
    return 0 if not failed else 1


def build_grid(columns: Sequence[Sequence[ImageChip]], gutter: int = GRID_GUTTER) -> ImageChip:
    """Rows are samples, columns are sources; white gutters between cells."""
    if not columns or not columns[0]:
        raise DataError("grid needs at least one column and one sample")
    rows = len(columns[0])
    h, w = columns[0][0].height, columns[0][0].width
    for col in columns:
        if len(col) != rows:
            raise DataError("every grid column needs the same number of samples")
        for chip in col:
            if chip.height != h or chip.width != w:
                raise DataError(f"grid cells must share extents, got {chip.height}x{chip.width} vs {h}x{w}")
    canvas = np.full((3, rows * h + (rows - 1) * gutter, len(columns) * w + (len(columns) - 1) * gutter),
                     255, dtype=np.uint8)
    for c, col in enumerate(columns):
        for r, chip in enumerate(col):
            y, x = r * (h + gutter), c * (w + gutter)
            canvas[:, y:y + h, x:x + w] = chip.to_rgb().pixels
    return ImageChip(canvas)


def cmd_grid(args) -> int:
    sources = [Path(args.sar)] + [Path(p) for p in args.outputs.split(",") if p] + [Path(args.labels)]
    maps = [_png_map(s) for s in sources]
    ids = sorted(maps[0])
    if not ids:
        raise DataError(f"{sources[0]}: no PNG files")
    for s, m in zip(sources[1:], maps[1:]):
        _matched(maps[0], m, f"grid ({sources[0]} vs {s})")
    if args.limit:
        ids = ids[:args.limit]
    grid = build_grid([[read_png(m[i]) for i in ids] for m in maps])
    write_png(args.out, grid)
    print(f"wrote {len(ids)}x{len(maps)} grid to {args.out}")
    return 0


def cmd_ablation(args) -> int:
    cfg = _run_config(args).train_config()
    manifest = load_paired(args.data, cfg.resolution)
    if not manifest.subset("val"):
        manifest = split_manifest(manifest, args.val_fraction, cfg.seed)
    report = run_ablation(manifest, cfg)
    text = report.to_text()
    Path(args.report).write_text(text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser

def _training_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file with [gen]/[disc]/[loss]/[train]/[denoise]")
    p.add_argument("--data", required=True, help="dataset root with sar/ and eo/")
    p.add_argument("--stage-epochs", type=_epochs, help="G1,G2,joint epoch counts, e.g. 5,5,17")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lambda-fm", type=float)
    p.add_argument("--resolution", type=int)
    p.add_argument("--window", type=_window, help="median window NxM")
    p.add_argument("--no-denoise", action="store_true", help="train on raw SAR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sar2eo", description="SAR-to-EO translation toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None, help="seed for every random draw")
        p.set_defaults(func=func)
        return p

    p = add("synth-data", cmd_synth_data, "write a synthetic paired dataset")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--speckle", type=float, default=0.3, help="multiplicative speckle strength")
    p.add_argument("--val-fraction", type=float, default=0.25, help="0 puts every pair in train")
    p.add_argument("--out", required=True)

    p = add("denoise", cmd_denoise, "median-filter one PNG")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=_window, default=DenoiseConfig())

    p = add("train", cmd_train, "staged adversarial training")
    _training_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = add("translate", cmd_translate, "SAR PNG (or directory of PNGs) to EO")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=_window, help="override the checkpoint's median window")
    p.add_argument("--no-denoise", action="store_true")

    p = add("evaluate", cmd_evaluate, "score predictions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--patches", type=int, default=4, help="perceptual tile grid size")

    add("gradcheck", cmd_gradcheck, "finite-difference gradient suite")

    p = add("grid", cmd_grid, "side-by-side comparison PNG")
    p.add_argument("--sar", required=True)
    p.add_argument("--outputs", required=True, help="comma-separated output directories")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=0, help="first N samples only (0 = all)")

    p = add("ablation", cmd_ablation, "train with and without denoising, compare on val")
    _training_flags(p)
    p.add_argument("--val-fraction", type=float, default=0.25,
                   help="held-out fraction when the dataset has no val split")
    p.add_argument("--report", required=True)
    return parser


# seeds default to the value each subcommand documents when --seed is absent
DEFAULT_SEEDS = {"synth-data": 7, "train": None, "ablation": None}


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors (2) and --help (0)
        return int(exc.code or 0)
    if args.seed is None:
        args.seed = DEFAULT_SEEDS.get(args.command, 0)
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except (Sar2EoError, OSError) as exc:
        kind = type(exc).__name__
        msg = str(exc).splitlines()[0] if str(exc) else kind
        print(f"error: {kind}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
