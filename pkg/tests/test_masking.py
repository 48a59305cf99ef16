import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clap_uad.attention import AttentionMap
from clap_uad.masking import (MosaicConfig, SaliencyMask, load_mask, mosaic_obfuscate,
                              q3_threshold, random_training_mask, save_mask, threshold_mask)

GRID = np.arange(16, dtype=np.float64).reshape(4, 4)


def test_q3_constant():
    assert q3_threshold(AttentionMap(np.full((5, 5), 0.3))) == pytest.approx(0.3)


def test_q3_arithmetic_oracle():
    mu = sum(range(16)) / 16
    sigma = math.sqrt(sum((v - mu) ** 2 for v in range(16)) / 16)
    assert mu == 7.5
    assert sigma == pytest.approx(math.sqrt(255 / 12))
    assert q3_threshold(GRID) == pytest.approx(mu + 0.674 * sigma, abs=1e-12)
    assert q3_threshold(GRID) == pytest.approx(10.607, abs=1e-3)


def test_threshold_mask_grid():
    m = threshold_mask(GRID)
    assert m.bits.sum() == 5
    np.testing.assert_array_equal(GRID[m.bits], [11, 12, 13, 14, 15])
    assert m.selected_fraction == 5 / 16


def test_threshold_mask_constant_is_empty():
    assert not threshold_mask(np.full((8, 8), 0.7)).bits.any()


def test_q3_gaussian_calibration():
    z = np.random.default_rng(0).standard_normal(10**6)
    assert q3_threshold(z) == pytest.approx(0.674, abs=0.01)
    expected = 0.5 * math.erfc(0.674 / math.sqrt(2))
    assert threshold_mask(z).selected_fraction == pytest.approx(expected, abs=0.01)


def test_mosaic_examples():
    img = np.zeros((4, 4))
    img[:2, :2] = [[0, 0.4], [0.8, 0.4]]
    img[2:, 2:] = 0.9
    bits = np.zeros((4, 4), dtype=bool)
    bits[0, 0] = True
    out = mosaic_obfuscate(img, SaliencyMask(bits), MosaicConfig(2))
    np.testing.assert_allclose(out[:2, :2], 0.4)
    keep = np.ones((4, 4), dtype=bool)
    keep[:2, :2] = False
    np.testing.assert_array_equal(out[keep], img[keep])


def test_mosaic_identities(rng):
    img = rng.random((10, 13))
    np.testing.assert_array_equal(
        mosaic_obfuscate(img, SaliencyMask(np.zeros((10, 13), bool)), MosaicConfig(4)), img)
    np.testing.assert_array_equal(
        mosaic_obfuscate(img, SaliencyMask(np.ones((10, 13), bool)), MosaicConfig(1)), img)


def test_mosaic_ragged_edge_cells():
    img = np.arange(25, dtype=np.float64).reshape(5, 5)
    bits = np.zeros((5, 5), bool)
    bits[4, 4] = True
    out = mosaic_obfuscate(img, SaliencyMask(bits), MosaicConfig(4))
    assert out[4, 4] == img[4, 4]  # 1x1 corner cell
    bits[:] = False
    bits[0, 4] = True
    out = mosaic_obfuscate(img, SaliencyMask(bits), MosaicConfig(4))
    np.testing.assert_allclose(out[:4, 4], img[:4, 4].mean())


def test_mosaic_errors(rng):
    with pytest.raises(ValueError):
        mosaic_obfuscate(rng.random((8, 8)), SaliencyMask(np.zeros((8, 9), bool)))
    with pytest.raises(ValueError):
        MosaicConfig(0)


def _brute_cells(shape, c):
    h, w = shape
    for y in range(0, h, c):
        for x in range(0, w, c):
            yield slice(y, min(y + c, h)), slice(x, min(x + c, w))


@settings(max_examples=100, deadline=None)
@given(st.integers(4, 40), st.integers(4, 40), st.integers(1, 9), st.floats(0, 0.3),
       st.integers(0, 2**32 - 1))
def test_mosaic_properties(h, w, c, p, seed):
    c = min(c, h, w)
    rng = np.random.default_rng(seed)
    img = rng.random((h, w))
    mask = SaliencyMask(rng.random((h, w)) < p)
    cfg = MosaicConfig(c)
    out = mosaic_obfuscate(img, mask, cfg)
    np.testing.assert_array_equal(mosaic_obfuscate(out, mask, cfg), out)
    for sy, sx in _brute_cells((h, w), c):
        if mask.bits[sy, sx].any():
            assert np.ptp(out[sy, sx]) <= 1e-12
            assert abs(out[sy, sx].mean() - img[sy, sx].mean()) <= 1e-6
        else:
            np.testing.assert_array_equal(out[sy, sx], img[sy, sx])


def test_random_training_mask():
    cfg = MosaicConfig(8)
    a = random_training_mask((64, 64), cfg, 1)
    np.testing.assert_array_equal(a.bits, random_training_mask((64, 64), cfg, 1).bits)
    assert not np.array_equal(a.bits, random_training_mask((64, 64), cfg, 2).bits)
    quantum = 64 / (64 * 64)
    for seed in range(200):
        f = random_training_mask((64, 64), cfg, seed).selected_fraction
        assert 0.05 - quantum <= f <= 0.25 + quantum


def test_random_training_mask_is_whole_cells():
    cfg = MosaicConfig(8)
    bits = random_training_mask((40, 36), cfg, 3).bits
    for sy, sx in _brute_cells(bits.shape, 8):
        assert bits[sy, sx].all() or not bits[sy, sx].any()


def test_mask_png_roundtrip(tmp_path, rng):
    m = SaliencyMask(rng.random((9, 11)) > 0.5)
    save_mask(tmp_path / "m.png", m)
    np.testing.assert_array_equal(load_mask(tmp_path / "m.png").bits, m.bits)
