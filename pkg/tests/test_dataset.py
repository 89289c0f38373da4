import dataclasses
import random

import numpy as np
import pytest

from sar2eo.dataset import (DatasetManifest, PairedSample, contrast_remap, light_blur, load_manifest, load_paired,
                            luminance, save_manifest, split_manifest, synth_manifest, synth_paired, write_paired)
from sar2eo.errors import ConfigError, DataError, DimensionError, PairingError
from sar2eo.imagechip import ImageChip, write_png
from sar2eo.trainer import TrainConfig, train


def make_dir(root, ids, rng, size=8, eo_only=(), sar_only=()):
    (root / "sar").mkdir(parents=True)
    (root / "eo").mkdir(parents=True)
    for i in ids:
        if i not in eo_only:
            write_png(root / "sar" / f"{i}.png", ImageChip(rng.integers(0, 256, (1, size, size), dtype=np.uint8)))
        if i not in sar_only:
            write_png(root / "eo" / f"{i}.png", ImageChip(rng.integers(0, 256, (3, size, size), dtype=np.uint8)))


def test_three_pairs(tmp_path, rng):
    make_dir(tmp_path, ["c", "a", "b"], rng)
    m = load_paired(tmp_path, 8)
    assert len(m) == 3 and m.ids == ["a", "b", "c"]
    assert m.counts["train"] == 3


def test_orphan_named(tmp_path, rng):
    make_dir(tmp_path, ["a", "b"], rng, sar_only=("a",))
    with pytest.raises(PairingError, match="a") as info:
        load_paired(tmp_path, 8)
    assert "a" in str(info.value)


def test_pairing_order_independent(tmp_path, rng):
    ids = [f"s{i}" for i in range(8)]
    shuffled = ids[:]
    random.Random(3).shuffle(shuffled)
    make_dir(tmp_path / "x", ids, np.random.default_rng(0))
    make_dir(tmp_path / "y", shuffled, np.random.default_rng(0))
    # same bytes under the same names, written in a different order
    for sub in ("sar", "eo"):
        for i in ids:
            (tmp_path / "y" / sub / f"{i}.png").write_bytes((tmp_path / "x" / sub / f"{i}.png").read_bytes())
    a, b = load_paired(tmp_path / "x", 8), load_paired(tmp_path / "y", 8)
    assert a.ids == sorted(ids)
    assert a.samples == b.samples


def test_resolution_and_layout_errors(tmp_path, rng):
    make_dir(tmp_path, ["a"], rng)
    with pytest.raises(DimensionError):
        load_paired(tmp_path, 16)
    with pytest.raises(DataError):
        load_paired(tmp_path / "missing", 8)


def test_sample_validation(rng):
    eo = ImageChip(np.zeros((3, 8, 8), dtype=np.uint8))
    with pytest.raises(DimensionError):
        PairedSample("x", eo, eo)
    with pytest.raises(DimensionError):
        PairedSample("x", ImageChip(np.zeros((1, 4, 4), dtype=np.uint8)), eo)
    with pytest.raises(ConfigError):
        PairedSample("x", ImageChip(np.zeros((1, 8, 8), dtype=np.uint8)), eo, split="holdout")


def test_synth_reproducible():
    a, b = synth_paired(4, 32, seed=5), synth_paired(4, 32, seed=5)
    for x, y in zip(a, b):
        assert x.sar.pixels.tobytes() == y.sar.pixels.tobytes()
        assert x.eo.pixels.tobytes() == y.eo.pixels.tobytes()
    c = synth_paired(4, 32, seed=6)
    assert a[0].eo != c[0].eo


def test_synth_noise_off_is_clean_transform():
    for s in synth_paired(3, 32, seed=1, speckle_strength=0.0):
        clean = light_blur(contrast_remap(luminance(s.eo))[None])
        np.testing.assert_array_equal(s.sar.pixels, clean)


def test_synth_structure_survives_speckle():
    for s in synth_paired(8, 64, seed=2, speckle_strength=0.3):
        r = np.corrcoef(s.sar.pixels[0].ravel().astype(float), luminance(s.eo).ravel())[0, 1]
        assert r > 0.5, s.id


def test_synth_validation():
    with pytest.raises(ConfigError):
        synth_paired(0, 32, 0)
    with pytest.raises(ConfigError):
        synth_paired(1, 30, 0)


def test_split():
    m = synth_manifest(10, 16, seed=0)
    s = split_manifest(m, 0.2, seed=4)
    assert s.counts["train"] == 8 and s.counts["val"] == 2
    assert [x.split for x in split_manifest(m, 0.2, seed=4).samples] == [x.split for x in s.samples]
    merged = split_manifest(s, 0.2, seed=4, merge=True)
    assert merged.counts["train"] == 10 and merged.counts["val"] == 0
    for bad in (0.0, 1.0, -0.5):
        with pytest.raises(ConfigError):
            split_manifest(m, bad, 0)


def test_manifest_round_trip(tmp_path):
    m = synth_manifest(6, 16, seed=1, val_fraction=0.5)
    write_paired(m.samples, tmp_path, with_manifest=False)
    save_manifest(m, tmp_path / "splits.tsv")
    back = load_manifest(tmp_path / "splits.tsv", tmp_path, 16)
    assert back.samples == m.samples
    write_paired(m.samples, tmp_path / "with")
    assert load_paired(tmp_path / "with", 16).samples == m.samples


def test_manifest_rejects_duplicates_and_bad_split_file(tmp_path):
    s = synth_paired(1, 16, 0)[0]
    with pytest.raises(DataError):
        DatasetManifest(None, (s, s), 16)
    write_paired([s], tmp_path)
    (tmp_path / "manifest.tsv").write_text("00000 train extra\n")
    with pytest.raises(DataError):
        load_paired(tmp_path, 16)


def test_synthetic_data_trains_one_step():
    m = synth_manifest(2, 16, seed=0)
    cfg = TrainConfig(resolution=16, stage_epochs=(0, 0, 1), batch_size=2,
                      gen=None, disc=dataclasses.replace(TrainConfig().disc, base_width=4))
    ckpt = train(m, cfg)
    assert len(ckpt.history) == 1
    assert np.isfinite(ckpt.history.g_loss[0])


def test_load_does_not_touch_files(tmp_path, rng):
    make_dir(tmp_path, ["a", "b"], rng)
    before = {p: (p.stat().st_mtime_ns, p.read_bytes()) for p in tmp_path.rglob("*") if p.is_file()}
    load_paired(tmp_path, 8)
    after = {p: (p.stat().st_mtime_ns, p.read_bytes()) for p in tmp_path.rglob("*") if p.is_file()}
    assert before == after
