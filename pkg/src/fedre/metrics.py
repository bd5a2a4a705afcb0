"""Reconstruction similarity restricted to privacy-sensitive regions, and
pixel-level segmentation scores for the tamper-detection task."""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

PSNR_CAP = 100.0
SSIM_WINDOW = 8
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _region_mask(shape, regions) -> np.ndarray:
    H, W = shape
    m = np.zeros((H, W), dtype=bool)
    for r in regions:
        if not r.within(H, W):
            raise ShapeError(f"region {r} lies outside the {H}x{W} image")
        m[r.a:r.a + r.w, r.b:r.b + r.h] = True
    if not m.any():
        raise ValueError("metrics need at least one non-empty region")
    return m


def _as_chw(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise ShapeError(f"expected (H, W) or (c, H, W) image, got {img.shape}")
    return img


def _pair(orig, recon):
    x, y = _as_chw(orig), _as_chw(recon)
    if x.shape != y.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def region_mse(orig, recon, regions) -> float:
    x, y = _pair(orig, recon)
    m = _region_mask(x.shape[1:], regions)
    return float(np.mean((x[:, m] - y[:, m]) ** 2))


def psnr_from_mse(mse: float) -> float:
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def region_psnr(orig, recon, regions) -> float:
    """Peak signal-to-noise ratio in dB for unit pixel range, capped at 100 dB."""
    return psnr_from_mse(region_mse(orig, recon, regions))


def _ssim_kernel() -> np.ndarray:
    # even window: offsets -4..3 around the centre pixel
    d = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-(d**2) / (2 * SSIM_SIGMA**2))
    return np.outer(g, g)


def region_ssim(orig, recon, regions) -> float:
    """Mean local SSIM over region pixels.

    Local statistics use a Gaussian window whose weights are restricted to
    region pixels and renormalised, so nothing outside the regions leaks in.
    """
    x, y = _pair(orig, recon)
    m = _region_mask(x.shape[1:], regions).astype(np.float64)
    k = _ssim_kernel()
    before = SSIM_WINDOW // 2
    after = SSIM_WINDOW - 1 - before
    pad = ((before, after), (before, after))

    def local(a):
        return np.einsum("hwij,ij->hw", sliding_window_view(np.pad(a, pad), k.shape), k)

    wsum = local(m)
    sel = m > 0
    vals = []
    for xc, yc in zip(x, y):
        mu_x = local(m * xc)[sel] / wsum[sel]
        mu_y = local(m * yc)[sel] / wsum[sel]
        sxx = local(m * xc * xc)[sel] / wsum[sel] - mu_x * mu_x
        syy = local(m * yc * yc)[sel] / wsum[sel] - mu_y * mu_y
        sxy = local(m * xc * yc)[sel] / wsum[sel] - mu_x * mu_y
        num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (sxx + syy + SSIM_C2)
        vals.append(num / den)
    return float(np.clip(np.mean(vals), -1.0, 1.0))


def segmentation_metrics(pred, truth, threshold: float = 0.5) -> tuple[float, float, float, float]:
    """Pixel-level (IoU, precision, recall, F-score).

    ``pred`` holds probabilities and is thresholded at ``threshold``. Both
    masks empty scores 1 everywhere; an empty prediction against a
    non-empty truth (or the reverse) scores 0 everywhere.
    """
    p = np.asarray(pred, dtype=np.float64) >= threshold
    t = np.asarray(truth, dtype=np.float64) >= 0.5
    if p.shape != t.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {t.shape}")
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0, 1.0
    if tp == 0:
        return 0.0, 0.0, 0.0, 0.0
    iou = tp / (tp + fp + fn)
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    f = 2 * precision * recall / (precision + recall)
    return iou, precision, recall, f
