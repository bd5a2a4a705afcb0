"""Layer-wise local differential privacy.

The total budget is split across layers inversely to their PSI scores, so
layers that leak more about the sensitive regions get a smaller share and
therefore more noise. Each layer gradient is L2-clipped to its threshold and
perturbed with Gaussian noise of standard deviation ``C_l * sigma_l`` where
``sigma_l = sqrt(2 T ln(1/delta_l)) / eps_l``. Per-layer guarantees add up
under simple composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import GradientSet, LayerGradient


@dataclass(frozen=True)
class PrivacySpec:
    """``epsilon`` may be ``math.inf``, meaning clip only and add no noise."""

    epsilon: float
    delta: float
    rounds: int
    clip_thresholds: tuple
    s_floor: float = 1e-6

    def __post_init__(self):
        clip = self.clip_thresholds
        if isinstance(clip, (int, float)):
            clip = (clip,)
        object.__setattr__(self, "clip_thresholds", tuple(float(c) for c in clip))
        if not (self.epsilon > 0):
            raise ValueError(f"epsilon must be positive or inf, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be at least 1, got {self.rounds}")
        if not self.clip_thresholds or any(not (c > 0 and math.isfinite(c)) for c in self.clip_thresholds):
            raise ValueError(f"clip thresholds must be positive, got {self.clip_thresholds}")
        if self.s_floor < 0:
            raise ValueError("s_floor must be non-negative")

    @property
    def noiseless(self) -> bool:
        return math.isinf(self.epsilon)

    def clips_for(self, n_layers: int) -> tuple:
        """Per-layer thresholds; a single value is shared by every layer."""
        if len(self.clip_thresholds) == 1:
            return self.clip_thresholds * n_layers
        if len(self.clip_thresholds) != n_layers:
            raise ValueError(
                f"{len(self.clip_thresholds)} clip thresholds given for a {n_layers}-layer model"
            )
        return self.clip_thresholds


@dataclass
class LayerBudget:
    per_layer_epsilon: list
    per_layer_delta: list
    per_layer_sigma: list

    def __len__(self):
        return len(self.per_layer_epsilon)


def noise_multiplier(eps_l: float, delta_l: float, rounds: int) -> float:
    if math.isinf(eps_l):
        return 0.0
    return math.sqrt(2.0 * rounds * math.log(1.0 / delta_l)) / eps_l


def _budget(eps: list, spec: PrivacySpec) -> LayerBudget:
    n = len(eps)
    deltas = [spec.delta / n] * n
    sigmas = [noise_multiplier(e, d, spec.rounds) for e, d in zip(eps, deltas)]
    return LayerBudget(eps, deltas, sigmas)


def allocate_budget(scores, spec: PrivacySpec) -> LayerBudget:
    """Split epsilon inversely to the (floored) PSI scores; delta is split evenly."""
    s = np.asarray(getattr(scores, "per_layer", scores), dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("need one PSI score per layer")
    if np.any(~np.isfinite(s)) or np.any(s < 0):
        raise ValueError(f"PSI scores must be finite and non-negative, got {s.tolist()}")
    floored = np.maximum(s, spec.s_floor)
    if np.any(floored == 0):
        raise ZeroDivisionError("zero PSI score with s_floor = 0")
    if spec.noiseless:
        return _budget([math.inf] * s.size, spec)
    inv = 1.0 / floored
    eps = (spec.epsilon * inv / inv.sum()).tolist()
    return _budget(eps, spec)


def allocate_uniform(n_layers: int, spec: PrivacySpec) -> LayerBudget:
    """Baseline: every layer gets epsilon / L."""
    return _budget([spec.epsilon / n_layers] * n_layers, spec)


def compose_check(budget: LayerBudget, spec: PrivacySpec) -> bool:
    """Simple composition: the per-layer budgets must not exceed the totals."""
    eps_ok = math.fsum(budget.per_layer_epsilon) <= spec.epsilon + 1e-9
    delta_ok = math.fsum(budget.per_layer_delta) <= spec.delta + 1e-12
    return bool(eps_ok and delta_ok)


def clip(g: np.ndarray, C: float) -> np.ndarray:
    if not C > 0:
        raise ValueError("clip threshold must be positive")
    g = np.asarray(g, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    if norm <= C:
        return g.copy()
    return g * (C / norm)


def noise_stream(seed: int, round_index: int, client_id: int) -> np.random.Generator:
    """Counter-based generator, one independent stream per (seed, round, client)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, round_index, client_id])))


def gaussian(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal draws via the Box-Muller transform."""
    n = int(np.prod(size))
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)  # (0, 1], keeps the log finite
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])[:n]
    return z.reshape(size)


def perturb(g_clipped: np.ndarray, C: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    g_clipped = np.asarray(g_clipped, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return g_clipped.copy()
    return g_clipped + C * sigma * gaussian(rng, g_clipped.shape)


def privatize(grads: GradientSet, budget: LayerBudget, spec: PrivacySpec, rng) -> tuple[GradientSet, list]:
    """Clip then perturb every layer. Returns the noisy gradients and the
    per-layer norms after clipping (before noise)."""
    clips = spec.clips_for(len(grads.per_layer))
    if len(budget) != len(grads.per_layer):
        raise ValueError("budget and gradients disagree on the layer count")
    out, norms = [], []
    for g, C, sigma in zip(grads.per_layer, clips, budget.per_layer_sigma):
        clipped = clip(g.flat(), C)
        norms.append(float(np.linalg.norm(clipped)))
        out.append(LayerGradient.from_flat(perturb(clipped, C, sigma, rng), g))
    return GradientSet(out, grads.sample_count), norms
