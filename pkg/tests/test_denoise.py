import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sar2eo.denoise import (DenoiseConfig, add_salt_pepper, add_speckle, median_filter, median_filter_array,
                            median_filter_channels, median_filter_naive, restoration_rate)
from sar2eo.errors import ConfigError, ContractError, DataError, DimensionError
from sar2eo.imagechip import ImageChip


def chip(arr):
    return ImageChip(np.asarray(arr, dtype=np.uint8)[None])


def test_config_validation():
    assert str(DenoiseConfig()) == "3x3"
    assert DenoiseConfig.parse("5x3") == DenoiseConfig(5, 3)
    for bad in [(2, 3), (3, 0), (3, 4)]:
        with pytest.raises(ConfigError):
            DenoiseConfig(*bad)
    with pytest.raises(ConfigError):
        DenoiseConfig.parse("3by3")
    with pytest.raises(ConfigError):
        DenoiseConfig(3, 3, "reflect")


def test_constant_image_unchanged():
    img = chip(np.full((9, 7), 77))
    for cfg in (DenoiseConfig(), DenoiseConfig(5, 3), DenoiseConfig(1, 1)):
        assert median_filter(img, cfg) == img


def test_single_spike_removed():
    arr = np.zeros((5, 5), dtype=np.uint8)
    arr[2, 2] = 255
    out = median_filter(chip(arr)).pixels[0]
    assert np.all(out == 0)


@pytest.mark.parametrize("window", [(3, 3), (5, 5), (3, 5), (1, 3)])
def test_matches_naive_oracle(rng, window):
    for _ in range(10):
        arr = rng.integers(0, 256, size=(32, 32), dtype=np.uint8)
        fast = median_filter_array(arr, *window)
        np.testing.assert_array_equal(fast, median_filter_naive(arr, *window))


def test_naive_oracle_by_hand():
    arr = np.arange(25, dtype=np.uint8).reshape(5, 5)
    out = median_filter_naive(arr, 3, 3)
    # arithmetic ramp: the 3x3 median is the centre value
    np.testing.assert_array_equal(out, arr)
    arr2 = np.array([[9, 1, 5], [3, 7, 2], [8, 4, 6]], dtype=np.uint8)
    assert median_filter_naive(arr2, 3, 3)[1, 1] == 5


def test_border_band_copied(rng):
    arr = rng.integers(0, 256, size=(20, 17), dtype=np.uint8)
    out = median_filter_array(arr, 5, 3)
    np.testing.assert_array_equal(out[:2], arr[:2])
    np.testing.assert_array_equal(out[-2:], arr[-2:])
    np.testing.assert_array_equal(out[:, :1], arr[:, :1])
    np.testing.assert_array_equal(out[:, -1:], arr[:, -1:])


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(5, 14), st.integers(5, 14))), st.sampled_from([(3, 3), (5, 5), (3, 5)]))
def test_min_max_bounding_and_subset(arr, window):
    n, m = window
    out = median_filter_array(arr, n, m)
    rn, rm = n // 2, m // 2
    for i in range(rn, arr.shape[0] - rn):
        for j in range(rm, arr.shape[1] - rm):
            win = arr[i - rn:i + rn + 1, j - rm:j + rm + 1]
            assert win.min() <= out[i, j] <= win.max()
            assert out[i, j] in win
    np.testing.assert_array_equal(out, median_filter_naive(arr, n, m))


def test_errors():
    with pytest.raises(ContractError):
        median_filter(ImageChip(np.zeros((3, 8, 8), dtype=np.uint8)))
    with pytest.raises(DimensionError):
        median_filter(chip(np.zeros((2, 8))), DenoiseConfig(3, 3))
    with pytest.raises(ContractError):
        median_filter_array(np.zeros((8, 8), dtype=np.float32), 3, 3)


def test_per_channel_filter(rng):
    px = rng.integers(0, 256, size=(3, 12, 12), dtype=np.uint8)
    out = median_filter_channels(ImageChip(px)).pixels
    for c in range(3):
        np.testing.assert_array_equal(out[c], median_filter_naive(px[c], 3, 3))


# ---------------------------------------------------------------------------
# noise models

def test_speckle(rng):
    img = chip(rng.integers(20, 236, size=(32, 32)))
    assert add_speckle(img, 0.0, 1) == img
    assert add_speckle(img, 0.5, 9) == add_speckle(img, 0.5, 9)
    assert add_speckle(img, 0.5, 9).pixels.tobytes() == add_speckle(img, 0.5, 9).pixels.tobytes()
    dev = [np.abs(add_speckle(img, s, 3).pixels.astype(int) - img.pixels).mean() for s in (0.1, 0.3, 0.5)]
    assert dev[0] < dev[1] < dev[2]
    for bad in (-0.1, 1.5):
        with pytest.raises(ConfigError):
            add_speckle(img, bad, 0)


def test_salt_pepper():
    img = chip(np.full((100, 100), 128))
    assert add_salt_pepper(img, 0.0, 1) == img
    full = add_salt_pepper(img, 1.0, 1).pixels
    assert set(np.unique(full)) <= {0, 255}
    noisy = add_salt_pepper(img, 0.05, 4).pixels
    assert int((noisy != 128).sum()) == 500
    assert add_salt_pepper(img, 0.05, 4) == add_salt_pepper(img, 0.05, 4)
    with pytest.raises(ConfigError):
        add_salt_pepper(img, 1.2, 0)


def test_salt_pepper_rgb_corrupts_all_channels():
    img = ImageChip(np.full((3, 10, 10), 100, dtype=np.uint8))
    noisy = add_salt_pepper(img, 0.1, 2).pixels
    hit = noisy[0] != 100
    assert hit.sum() == 10
    assert np.all(noisy[:, hit] == noisy[0, hit])


def test_restoration_rate():
    ramp = np.add.outer(np.arange(64), np.arange(64)).astype(np.uint8) * 2
    clean = chip(ramp)
    noisy = add_salt_pepper(clean, 0.05, 11)
    assert restoration_rate(clean, noisy, clean) == 1.0
    assert restoration_rate(clean, noisy, noisy) < 0.05
    rate = restoration_rate(clean, noisy, median_filter(noisy))
    assert rate > 0.9
    with pytest.raises(DataError):
        restoration_rate(clean, clean, clean)
