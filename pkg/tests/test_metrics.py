import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fedre import metrics
from fedre.datagen import Rect
from fedre.errors import ShapeError


def reference_ssim(x, y, regions, sigma=1.5, win=8, c1=1e-4, c2=9e-4):
    """Straight-line masked SSIM: per region pixel, a Gaussian window over
    offsets -win/2 .. win/2-1 restricted to region pixels."""
    H, W = x.shape
    inside = np.zeros((H, W), bool)
    for r in regions:
        inside[r.a:r.a + r.w, r.b:r.b + r.h] = True
    vals = []
    for i in range(H):
        for j in range(W):
            if not inside[i, j]:
                continue
            ws, xs, ys = [], [], []
            for di in range(-win // 2, win // 2):
                for dj in range(-win // 2, win // 2):
                    p, q = i + di, j + dj
                    if 0 <= p < H and 0 <= q < W and inside[p, q]:
                        ws.append(math.exp(-(di * di) / (2 * sigma**2)) * math.exp(-(dj * dj) / (2 * sigma**2)))
                        xs.append(x[p, q])
                        ys.append(y[p, q])
            w = np.array(ws) / sum(ws)
            xs, ys = np.array(xs), np.array(ys)
            mx, my = w @ xs, w @ ys
            vx = w @ (xs - mx) ** 2
            vy = w @ (ys - my) ** 2
            cov = w @ ((xs - mx) * (ys - my))
            vals.append((2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


REGIONS = [Rect(1, 2, 5, 6), Rect(8, 8, 3, 4)]


def test_identity():
    x = np.random.default_rng(0).random((12, 12))
    assert metrics.region_mse(x, x, REGIONS) == 0
    assert metrics.region_psnr(x, x, REGIONS) == 100.0
    assert metrics.region_ssim(x, x, REGIONS) == pytest.approx(1.0, abs=1e-12)


def test_constant_offset():
    x = np.random.default_rng(1).random((12, 12)) * 0.8
    assert metrics.region_mse(x, x + 0.1, REGIONS) == pytest.approx(0.01, abs=1e-15)
    assert metrics.region_psnr(x, x + 0.1, REGIONS) == pytest.approx(20.0, abs=1e-9)


def test_mse_only_uses_region_pixels():
    x = np.zeros((6, 6))
    y = np.zeros((6, 6))
    y[5, 5] = 1.0
    assert metrics.region_mse(x, y, [Rect(0, 0, 2, 2)]) == 0
    y[0, 0] = 1.0
    assert metrics.region_mse(x, y, [Rect(0, 0, 2, 2)]) == 0.25


def test_overlapping_regions_counted_once():
    x, y = np.zeros((4, 4)), np.zeros((4, 4))
    y[1, 1] = 1.0
    # union of the two 2x2 squares has 7 pixels
    assert metrics.region_mse(x, y, [Rect(0, 0, 2, 2), Rect(1, 1, 2, 2)]) == pytest.approx(1 / 7)


def test_ssim_negative_image():
    x = np.random.default_rng(2).random((12, 12))
    assert metrics.region_ssim(x, 1 - x, REGIONS) < 0.5


@pytest.mark.parametrize("seed", range(4))
def test_ssim_matches_reference_loop(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((12, 12))
    y = np.clip(x + rng.normal(0, 0.2, x.shape), 0, 1)
    assert metrics.region_ssim(x, y, REGIONS) == pytest.approx(reference_ssim(x, y, REGIONS), abs=1e-12)


def test_ssim_multichannel_is_channel_mean():
    rng = np.random.default_rng(5)
    x, y = rng.random((2, 10, 10)), rng.random((2, 10, 10))
    r = [Rect(0, 0, 6, 6)]
    want = np.mean([reference_ssim(x[c], y[c], r) for c in range(2)])
    assert metrics.region_ssim(x, y, r) == pytest.approx(want, abs=1e-12)


@given(arrays(np.float64, (8, 8), elements=st.floats(0, 1)), arrays(np.float64, (8, 8), elements=st.floats(0, 1)))
@settings(max_examples=50, deadline=None)
def test_metric_ranges(x, y):
    r = [Rect(1, 1, 5, 4)]
    mse = metrics.region_mse(x, y, r)
    assert mse >= 0
    assert -1 <= metrics.region_ssim(x, y, r) <= 1
    if mse >= 1e-10:
        assert metrics.region_psnr(x, y, r) == pytest.approx(10 * math.log10(1 / mse))


def test_errors():
    x = np.zeros((4, 4))
    with pytest.raises(ValueError):
        metrics.region_mse(x, x, [])
    with pytest.raises(ShapeError):
        metrics.region_mse(x, np.zeros((4, 5)), [Rect(0, 0, 1, 1)])
    with pytest.raises(ShapeError):
        metrics.region_ssim(x, x, [Rect(3, 3, 2, 2)])


def test_segmentation_examples():
    truth = np.zeros((4, 4))
    truth[:2, :] = 1
    assert metrics.segmentation_metrics(truth, truth) == (1.0, 1.0, 1.0, 1.0)
    other = 1 - truth
    assert metrics.segmentation_metrics(other, truth) == (0.0, 0.0, 0.0, 0.0)
    half = np.zeros((4, 4))
    half[0, :] = 1
    iou, p, r, f = metrics.segmentation_metrics(half, truth)
    assert (iou, p, r) == (0.5, 1.0, 0.5)
    assert f == pytest.approx(2 / 3)


def test_segmentation_conventions():
    z = np.zeros((3, 3))
    assert metrics.segmentation_metrics(z, z) == (1.0, 1.0, 1.0, 1.0)
    assert metrics.segmentation_metrics(z, np.ones((3, 3))) == (0.0, 0.0, 0.0, 0.0)
    assert metrics.segmentation_metrics(np.ones((3, 3)), z) == (0.0, 0.0, 0.0, 0.0)
    # probabilities are thresholded at 0.5 inclusive
    assert metrics.segmentation_metrics(np.full((3, 3), 0.5), np.ones((3, 3)))[0] == 1.0
    with pytest.raises(ShapeError):
        metrics.segmentation_metrics(z, np.zeros((3, 4)))


@given(arrays(np.float64, (5, 5), elements=st.floats(0, 1)), arrays(np.bool_, (5, 5)))
@settings(max_examples=100, deadline=None)
def test_segmentation_ranges(pred, truth):
    vals = metrics.segmentation_metrics(pred, truth.astype(float))
    assert all(0 <= v <= 1 for v in vals)
