"""Per-layer PSI scores: how strongly each layer's gradient reacts to pixels
inside a sample's privacy-sensitive regions.

For a layer l the gradient-input Jacobian has shape (P_l, c, H, W). Each
region pixel is reduced to one number, the Frobenius norm over all P_l
parameter coordinates and all c channels; the region's score is the mean of
those norms. A sample's score averages its regions with equal weight, and a
model's score averages over a seeded subset of samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .datagen import Rect, Sample
from .errors import ShapeError


@dataclass
class PsiScores:
    per_layer: list
    n_samples_used: int

    def __post_init__(self):
        self.per_layer = [float(s) for s in self.per_layer]
        if any(not np.isfinite(s) or s < 0 for s in self.per_layer):
            raise ValueError(f"PSI scores must be finite and non-negative, got {self.per_layer}")

    def __len__(self):
        return len(self.per_layer)


def align_region(jacobian: np.ndarray, region: Rect) -> np.ndarray:
    """(w, h) matrix of per-pixel Frobenius norms over parameters and channels."""
    jacobian = np.asarray(jacobian, dtype=np.float64)
    if jacobian.ndim != 4:
        raise ShapeError(f"jacobian must have shape (P, c, H, W), got {jacobian.shape}")
    _, _, H, W = jacobian.shape
    if not region.within(H, W):
        raise ShapeError(f"region {region} lies outside the {H}x{W} image")
    block = jacobian[:, :, region.a:region.a + region.w, region.b:region.b + region.h]
    return np.sqrt(np.einsum("pcij,pcij->ij", block, block))


def psi_score(aligned: np.ndarray) -> float:
    aligned = np.asarray(aligned, dtype=np.float64)
    if aligned.size == 0:
        raise ValueError("PSI score of an empty region is undefined")
    return float(aligned.sum() / aligned.size)


def sample_psi(model: nn.Model, sample: Sample, h: float = 1e-4, method: str = "auto") -> list[float]:
    """Per-layer score of one sample, averaged over its regions.

    Only Jacobian columns for pixels inside some region are evaluated.
    """
    if not sample.psi_regions:
        raise ValueError("sample has no privacy-sensitive regions")
    H, W = sample.tamper_mask.shape
    for r in sample.psi_regions:
        if not r.within(H, W):
            raise ShapeError(f"region {r} lies outside the {H}x{W} image")
    pixels = np.flatnonzero(sample.region_union())
    cols = nn.jacobian_columns(model, sample.image, sample.tamper_mask, pixels, h, method)
    where = np.full(H * W, -1)
    where[pixels] = np.arange(pixels.size)
    scores = []
    for jl in cols:
        norms = np.sqrt(np.einsum("pcn,pcn->n", jl, jl))
        per_region = [psi_score(norms[where[r.pixels(W)]]) for r in sample.psi_regions]
        scores.append(float(np.mean(per_region)))
    return scores


def psi_scores_for_model(
    model: nn.Model,
    samples: list,
    max_samples: int = 10,
    h: float = 1e-4,
    seed: int = 0,
    method: str = "auto",
) -> PsiScores:
    """Average per-layer PSI over ``min(max_samples, len(samples))`` samples.

    When there are more samples than ``max_samples`` a subset is drawn
    without replacement using ``seed``; samples without regions are skipped.
    """
    if not samples:
        raise ValueError("no samples to score")
    if max_samples < 1:
        raise ValueError("max_samples must be at least 1")
    if len(samples) > max_samples:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(len(samples), size=max_samples, replace=False))
        chosen = [samples[i] for i in idx]
    else:
        chosen = list(samples)
    rows = [sample_psi(model, s, h, method) for s in chosen if s.psi_regions]
    if not rows:
        raise ValueError("none of the sampled samples has a privacy-sensitive region")
    return PsiScores(np.mean(rows, axis=0).tolist(), len(rows))
