"""Gradient-inversion attack: recover a client's input from its uploaded
gradient by optimising a dummy image until its gradient matches.

The attacker knows the broadcast model and the true mask (label-known
variant) and minimises ``||grad_w L(dummy, mask) - target||^2`` by plain
gradient descent on the dummy pixels, projected back onto [0, 1] after each
step. The best iterate seen is returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import NumericError, ShapeError
from .metrics import psnr_from_mse, region_mse, region_ssim

METHODS = ("pixel-fd", "weight-fd")


@dataclass(frozen=True)
class AttackConfig:
    iterations: int = 2000
    step: float = 0.1
    init: str = "uniform"
    seed: int = 0
    method: str = "pixel-fd"
    h: float = 1e-4
    # divide the match loss by ||target||^2 so one step size fits any gradient scale
    relative: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not self.step > 0:
            raise ValueError("step size must be positive")
        if not self.h > 0:
            raise ValueError("finite-difference step must be positive")
        if self.init not in ("uniform", "half"):
            raise ValueError(f"unknown init scheme {self.init!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown attack method {self.method!r}")


@dataclass
class AttackResult:
    reconstruction: np.ndarray
    match_loss: float
    mse: float | None
    psnr: float | None
    ssim: float | None
    iterations: int
    history: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "match_loss": self.match_loss,
            "mse": self.mse,
            "psnr": self.psnr,
            "ssim": self.ssim,
            "iterations": self.iterations,
        }


def initial_guess(shape, init: str, seed) -> np.ndarray:
    if init == "half":
        return np.full(shape, 0.5)
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=shape)


def _flat_target(model: nn.Model, target: nn.GradientSet) -> np.ndarray:
    if not target.matches(model):
        raise ShapeError("target gradient shapes do not match the model")
    return target.flat()


def match_loss(model: nn.Model, x, mask, target_flat: np.ndarray) -> float:
    g = nn.backward(model, x, mask).flat()
    d = g - target_flat
    return float(d @ d)


def _pixel_fd(model, x, y, t, h):
    """Match loss at ``x`` and its central-difference gradient over pixels."""
    D = x.size
    Xb = np.broadcast_to(x.ravel(), (2 * D + 1, D)).copy()
    idx = np.arange(D)
    Xb[2 * idx, idx] += h
    Xb[2 * idx + 1, idx] -= h
    Xb = Xb.reshape((2 * D + 1,) + x.shape)
    Yb = np.broadcast_to(y, (2 * D + 1,) + y.shape)
    gs = np.concatenate(nn.per_sample_gradients(model, Xb, Yb), axis=1)
    r = gs - t
    losses = np.einsum("bp,bp->b", r, r)
    grad = (losses[0:2 * D:2] - losses[1:2 * D:2]) / (2 * h)
    return float(losses[-1]), grad.reshape(x.shape)


def _weight_fd(model, x, y, t, h):
    """Match loss and ``2 J^T r`` via a directional difference in weight space.

    ``J^T r`` is the input gradient of ``r . grad_w L``, which equals the
    derivative of ``grad_x L`` along the weight direction ``r``.
    """
    g = nn.backward(model, x, y)
    r = g.flat() - t
    loss = float(r @ r)
    rn = math.sqrt(loss)
    if rn == 0.0:
        return loss, np.zeros_like(x)
    parts, start = [], 0
    for lg in g.per_layer:
        parts.append(nn.LayerGradient.from_flat(r[start:start + lg.size] / rn, lg))
        start += lg.size
    unit = nn.GradientSet(parts, 1)
    _, dx_plus = nn.input_gradient(nn.apply_gradient(model, unit, -h), x, y)
    _, dx_minus = nn.input_gradient(nn.apply_gradient(model, unit, h), x, y)
    return loss, 2.0 * rn * (dx_plus - dx_minus) / (2 * h)


def invert_gradient(
    model: nn.Model,
    target: nn.GradientSet,
    true_mask,
    cfg: AttackConfig = AttackConfig(),
    original=None,
    regions=None,
) -> AttackResult:
    """Reconstruct an input whose gradient matches ``target``.

    Region metrics are filled in when both ``original`` and ``regions`` are
    given; ``history`` holds the best match loss after each iteration.
    """
    y = np.asarray(true_mask, dtype=np.float64)
    if y.shape != model.output_shape:
        raise ShapeError(f"mask shape {y.shape} does not match model output {model.output_shape}")
    t = _flat_target(model, target)
    scale = float(t @ t) if cfg.relative else 1.0
    if not scale > 0:
        scale = 1.0
    step_fn = _pixel_fd if cfg.method == "pixel-fd" else _weight_fd

    x = initial_guess(model.input_shape, cfg.init, cfg.seed)
    best_x, best = x.copy(), math.inf
    history = []
    for it in range(cfg.iterations):
        try:
            loss, grad = step_fn(model, x, y, t, cfg.h)
        except NumericError as exc:
            raise NumericError(f"non-finite gradient-match loss at iteration {it} ({exc})") from exc
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise NumericError(f"non-finite gradient-match loss at iteration {it}")
        if loss < best:
            best, best_x = loss, x.copy()
        history.append(best)
        x = np.clip(x - cfg.step * grad / scale, 0.0, 1.0)
    try:
        final = match_loss(model, x, y, t)
    except NumericError:
        final = math.nan
    if not math.isfinite(final):
        raise NumericError(f"non-finite gradient-match loss at iteration {cfg.iterations}")
    if final < best:
        best, best_x = final, x
    if history:
        history[-1] = min(history[-1], best)

    mse = psnr = ssim = None
    if original is not None and regions:
        mse = region_mse(original, best_x, regions)
        psnr = psnr_from_mse(mse)
        ssim = region_ssim(original, best_x, regions)
    return AttackResult(best_x, best, mse, psnr, ssim, cfg.iterations, history)


def victim_update(
    model: nn.Model,
    sample,
    spec,
    rng: np.random.Generator,
    *,
    allocation: str = "psi",
    psi_samples: int = 1,
    fd_step: float = 1e-4,
    round_index: int = 0,
):
    """The update a one-sample client would upload in round ``round_index``."""
    from .federation import ClientState, client_update

    client = ClientState(0, [sample])
    return client_update(
        model, client, spec, round_index, rng,
        psi_samples=psi_samples, fd_step=fd_step, allocation=allocation,
    )
