"""Minimal conv/dense network with exact backpropagation.

All tensors are float64 numpy arrays. A single sample has shape
``(channels, height, width)``; the batched internals add a leading sample
axis. The network ends in a head layer that fixes the training loss:
``SigmoidHead`` gives per-pixel probabilities scored with mean binary
cross-entropy, ``LinearHead`` gives raw outputs scored with half the mean
squared error (used for closed-form test models).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import binio
from .errors import FormatError, NumericError, ShapeError

PRED_CLAMP = 1e-7

# rough cap on im2col elements per batched call
_CHUNK_ELEMS = 3_000_000


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    bias: bool = True


@dataclass(frozen=True)
class Conv2D:
    in_ch: int
    out_ch: int
    kernel: int = 3
    pad: int = 1


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class SigmoidHead:
    pass


@dataclass(frozen=True)
class LinearHead:
    pass


PARAM_LAYERS = (Dense, Conv2D)
HEADS = (SigmoidHead, LinearHead)


def _param_shapes(layer):
    if isinstance(layer, Dense):
        return (layer.out_features, layer.in_features), (layer.out_features if layer.bias else 0,)
    return (layer.out_ch, layer.in_ch, layer.kernel, layer.kernel), (layer.out_ch,)


@dataclass
class Model:
    """Ordered layer list plus one ``(weight, bias)`` pair per parameterized layer.

    ``output_shape`` defaults to the input's ``(height, width)``; a layer
    without bias stores a zero-length bias array. ``input_offset`` is
    subtracted from every pixel before the first layer (centring [0, 1]
    images keeps plain gradient descent well conditioned).
    """

    input_shape: tuple
    layers: list
    params: list
    output_shape: tuple | None = None
    input_offset: float = 0.0

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ShapeError(f"input shape must be (c, H, W) with positive extents, got {self.input_shape}")
        if self.output_shape is None:
            self.output_shape = self.input_shape[1:]
        self.output_shape = tuple(int(v) for v in self.output_shape)
        self.input_offset = float(self.input_offset)
        if not math.isfinite(self.input_offset):
            raise ValueError("input offset must be finite")
        self.layers = list(self.layers)
        self.params = [
            (np.array(w, dtype=np.float64), np.array(b, dtype=np.float64)) for w, b in self.params
        ]
        for i, (w, b) in enumerate(self.params):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f"parameter block {i} holds non-finite values")
        self._validate()

    def _validate(self):
        if not self.layers or not isinstance(self.layers[-1], HEADS):
            raise ShapeError("last layer must be a head (SigmoidHead or LinearHead)")
        if any(isinstance(layer, HEADS) for layer in self.layers[:-1]):
            raise ShapeError("head layer may only appear last")
        shape = self.input_shape
        pi = 0
        for i, layer in enumerate(self.layers[:-1]):
            if isinstance(layer, Conv2D):
                if len(shape) != 3 or shape[0] != layer.in_ch:
                    raise ShapeError(f"layer {i}: Conv2D expects {layer.in_ch} channels, got shape {shape}")
                if not 0 <= layer.pad <= layer.kernel - 1:
                    raise ShapeError(f"layer {i}: pad must lie in [0, kernel-1]")
                h = shape[1] + 2 * layer.pad - layer.kernel + 1
                w = shape[2] + 2 * layer.pad - layer.kernel + 1
                if h < 1 or w < 1:
                    raise ShapeError(f"layer {i}: kernel larger than padded input")
                shape = (layer.out_ch, h, w)
            elif isinstance(layer, Dense):
                if math.prod(shape) != layer.in_features:
                    raise ShapeError(f"layer {i}: Dense expects {layer.in_features} features, got shape {shape}")
                shape = (layer.out_features,)
            elif not isinstance(layer, ReLU):
                raise ShapeError(f"layer {i}: unknown layer type {type(layer).__name__}")
            if isinstance(layer, PARAM_LAYERS):
                if pi >= len(self.params):
                    raise ShapeError("fewer parameter blocks than parameterized layers")
                wshape, bshape = _param_shapes(layer)
                w, b = self.params[pi]
                if w.shape != wshape or b.shape != bshape:
                    raise ShapeError(
                        f"layer {i}: parameter shapes {w.shape}/{b.shape}, expected {wshape}/{bshape}"
                    )
                pi += 1
        if pi != len(self.params):
            raise ShapeError("more parameter blocks than parameterized layers")
        if math.prod(shape) != math.prod(self.output_shape):
            raise ShapeError(f"network output {shape} does not fit output shape {self.output_shape}")
        self._raw_output_shape = shape

    @property
    def layer_count(self) -> int:
        return len(self.params)

    @property
    def param_layers(self) -> list:
        return [layer for layer in self.layers if isinstance(layer, PARAM_LAYERS)]

    def param_counts(self) -> list[int]:
        return [w.size + b.size for w, b in self.params]

    def with_params(self, params) -> "Model":
        return Model(self.input_shape, self.layers, params, self.output_shape, self.input_offset)

    def copy(self) -> "Model":
        return self.with_params([(w.copy(), b.copy()) for w, b in self.params])


@dataclass
class LayerGradient:
    weight: np.ndarray
    bias: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weight.ravel(), self.bias.ravel()])

    @property
    def size(self) -> int:
        return self.weight.size + self.bias.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat()))

    def scaled(self, k: float) -> "LayerGradient":
        return LayerGradient(self.weight * k, self.bias * k)

    @classmethod
    def from_flat(cls, flat: np.ndarray, like: "LayerGradient") -> "LayerGradient":
        nw = like.weight.size
        return cls(flat[:nw].reshape(like.weight.shape).copy(), flat[nw:].reshape(like.bias.shape).copy())


@dataclass
class GradientSet:
    per_layer: list
    sample_count: int = 1

    def flat(self) -> np.ndarray:
        return np.concatenate([g.flat() for g in self.per_layer])

    def norms(self) -> list[float]:
        return [g.norm() for g in self.per_layer]

    def matches(self, model: Model) -> bool:
        return len(self.per_layer) == model.layer_count and all(
            g.weight.shape == w.shape and g.bias.shape == b.shape
            for g, (w, b) in zip(self.per_layer, model.params)
        )


# ---------------------------------------------------------------- construction


def init_model(layers, input_shape, seed: int, output_shape=None, input_offset: float = 0.0) -> Model:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for layer in layers:
        if not isinstance(layer, PARAM_LAYERS):
            continue
        wshape, bshape = _param_shapes(layer)
        if isinstance(layer, Dense):
            fan_in, fan_out = layer.in_features, layer.out_features
        else:
            fan_in = layer.in_ch * layer.kernel**2
            fan_out = layer.out_ch * layer.kernel**2
        s = math.sqrt(6.0 / (fan_in + fan_out))
        params.append((rng.uniform(-s, s, size=wshape), np.zeros(bshape)))
    return Model(input_shape, layers, params, output_shape, input_offset)


def conv_layers(hidden=(4,), channels: int = 1, kernel: int = 3) -> list:
    layers, c = [], channels
    for h in hidden:
        layers += [Conv2D(c, h, kernel, kernel // 2), ReLU()]
        c = h
    return layers + [Conv2D(c, 1, kernel, kernel // 2), SigmoidHead()]


def desk_model(seed: int, size: int = 16, hidden=(4,)) -> Model:
    """Conv(1->4, 3x3) -> ReLU -> Conv(4->1, 3x3) -> sigmoid on size x size
    images, inputs centred at 0.5."""
    return init_model(conv_layers(hidden), (1, size, size), seed, input_offset=0.5)


def dense_model(seed: int, input_shape=(1, 8, 8), hidden=(16,)) -> Model:
    d = math.prod(input_shape)
    layers, n = [], d
    for h in hidden:
        layers += [Dense(n, h), ReLU()]
        n = h
    layers += [Dense(n, input_shape[1] * input_shape[2]), SigmoidHead()]
    return init_model(layers, input_shape, seed, input_offset=0.5)


# ---------------------------------------------------------------- batched core


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _im2col(x, k, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    b, c, hp, wp = x.shape
    ho, wo = hp - k + 1, wp - k + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, ho * wo)
    return cols, ho, wo


def _conv(x, w, b, pad):
    k = w.shape[-1]
    cols, ho, wo = _im2col(x, k, pad)
    z = np.matmul(w.reshape(w.shape[0], -1), cols)
    if b is not None and b.size:
        z += b[:, None]
    return z.reshape(x.shape[0], w.shape[0], ho, wo), cols


def _run(model: Model, X, Y, *, valid=None, n_out=None, per_sample=False, input_grad=False):
    """Forward and backward pass on a batch.

    ``valid`` (window mode only) is a 0/1 array broadcastable to the spatial
    activations; positions outside the real image are forced to zero so
    that every conv sees the same zero padding as on the full image.

    Returns ``(losses, grads, dX)`` where ``grads`` holds ``(dW, db)`` per
    parameterized layer, summed over the batch or stacked per sample.
    """
    B = X.shape[0]
    a = X - model.input_offset if model.input_offset else X
    if valid is not None and model.input_offset:
        a = a * valid  # window padding must stay zero after centring
    caches = []
    pi = 0
    for layer in model.layers[:-1]:
        if isinstance(layer, Conv2D):
            w, b = model.params[pi]
            pi += 1
            z, cols = _conv(a, w, b, layer.pad)
            if valid is not None:
                z *= valid
            caches.append((layer, cols, a.shape))
            a = z
        elif isinstance(layer, Dense):
            w, b = model.params[pi]
            pi += 1
            xin = a.reshape(B, -1)
            z = xin @ w.T
            if b.size:
                z += b
            caches.append((layer, xin, a.shape))
            a = z
        else:
            mask = a > 0
            caches.append((layer, mask, None))
            a = a * mask

    n_out = n_out or math.prod(model.output_shape)
    Yz = Y.reshape(a.shape)
    if isinstance(model.layers[-1], SigmoidHead):
        p = _sigmoid(a)
        pc = np.clip(p, PRED_CLAMP, 1.0 - PRED_CLAMP)
        elem = -(Yz * np.log(pc) + (1.0 - Yz) * np.log1p(-pc))
        g = (p - Yz) * ((p > PRED_CLAMP) & (p < 1.0 - PRED_CLAMP))
    else:
        diff = a - Yz
        elem = 0.5 * diff * diff
        g = diff
    if valid is not None:
        elem = elem * valid
        g = g * valid
    losses = elem.reshape(B, -1).sum(axis=1) / n_out
    g = g / n_out

    grads = [None] * len(model.params)
    pi = len(model.params)
    for layer, saved, in_shape in reversed(caches):
        if isinstance(layer, ReLU):
            g = g * saved
            continue
        pi -= 1
        w, b = model.params[pi]
        need_dx = pi > 0 or input_grad
        if isinstance(layer, Conv2D):
            gf = g.reshape(B, w.shape[0], -1)
            if per_sample:
                dw = np.matmul(gf, saved.transpose(0, 2, 1)).reshape((B,) + w.shape)
                db = gf.sum(axis=2)
            else:
                dw = np.tensordot(gf, saved, axes=([0, 2], [0, 2])).reshape(w.shape)
                db = gf.sum(axis=(0, 2))
            if need_dx:
                k = layer.kernel
                wf = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
                g, _ = _conv(g, wf, None, k - 1 - layer.pad)
                if valid is not None:
                    g = g * valid
        else:
            if per_sample:
                dw = g[:, :, None] * saved[:, None, :]
                db = g if b.size else np.zeros((B, 0))
            else:
                dw = g.T @ saved
                db = g.sum(axis=0) if b.size else np.zeros(0)
            if need_dx:
                g = (g @ w).reshape(in_shape)
        if not b.size:
            db = np.zeros((B, 0)) if per_sample else np.zeros(0)
        grads[pi] = (dw, db)
    if not (np.all(np.isfinite(losses)) and all(np.all(np.isfinite(dw)) and np.all(np.isfinite(db)) for dw, db in grads)):
        raise NumericError("non-finite loss or gradient")
    if input_grad and not np.all(np.isfinite(g)):
        raise NumericError("non-finite input gradient")
    return losses, grads, (g if input_grad else None)


def _check_input(model: Model, x, what="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != model.input_shape:
        raise ShapeError(f"{what} shape {x.shape} does not match model input {model.input_shape}")
    return x


def _check_target(model: Model, y):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != model.output_shape:
        raise ShapeError(f"mask shape {y.shape} does not match model output {model.output_shape}")
    return y


# ---------------------------------------------------------------- public ops


def forward(model: Model, x) -> np.ndarray:
    """Head output for one sample, shaped ``model.output_shape``."""
    x = _check_input(model, x)
    return forward_batch(model, x[None])[0]


def forward_batch(model: Model, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1:] != model.input_shape:
        raise ShapeError(f"batch shape {X.shape} does not match model input {model.input_shape}")
    B = X.shape[0]
    a = X - model.input_offset
    pi = 0
    for layer in model.layers[:-1]:
        if isinstance(layer, Conv2D):
            w, b = model.params[pi]
            pi += 1
            a, _ = _conv(a, w, b, layer.pad)
        elif isinstance(layer, Dense):
            w, b = model.params[pi]
            pi += 1
            a = a.reshape(B, -1) @ w.T
            if b.size:
                a = a + b
        else:
            a = np.maximum(a, 0.0)
    if isinstance(model.layers[-1], SigmoidHead):
        a = _sigmoid(a)
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite network output")
    return a.reshape((B,) + model.output_shape)


def loss(pred, mask) -> float:
    """Mean per-pixel binary cross-entropy with predictions clamped away from 0 and 1."""
    pred = np.asarray(pred, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != mask.shape:
        raise ShapeError(f"prediction shape {pred.shape} != mask shape {mask.shape}")
    pc = np.clip(pred, PRED_CLAMP, 1.0 - PRED_CLAMP)
    return float(np.mean(-(mask * np.log(pc) + (1.0 - mask) * np.log1p(-pc))))


def model_loss(model: Model, x, mask) -> float:
    x = _check_input(model, x)
    y = _check_target(model, mask)
    losses, _, _ = _run(model, x[None], y[None])
    return float(losses[0])


def _to_gradset(grads, count) -> GradientSet:
    return GradientSet([LayerGradient(dw, db) for dw, db in grads], count)


def backward(model: Model, x, mask) -> GradientSet:
    """Exact gradient of the training loss for one sample."""
    x = _check_input(model, x)
    y = _check_target(model, mask)
    _, grads, _ = _run(model, x[None], y[None])
    return _to_gradset(grads, 1)


def batch_gradient(model: Model, X, Y) -> tuple[float, GradientSet]:
    """Mean loss and mean gradient over a batch of samples."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[1:] != model.input_shape or Y.shape[1:] != model.output_shape or len(X) != len(Y):
        raise ShapeError("batch shapes do not match the model")
    n = len(X)
    losses, grads, _ = _run(model, X, Y)
    grads = [(dw / n, db / n) for dw, db in grads]
    return float(losses.mean()), _to_gradset(grads, n)


def per_sample_gradients(model: Model, X, Y) -> list[np.ndarray]:
    """Flattened per-sample gradients, one ``(B, P_l)`` array per layer."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _, grads, _ = _run(model, X, Y, per_sample=True)
    B = X.shape[0]
    return [np.concatenate([dw.reshape(B, -1), db.reshape(B, -1)], axis=1) for dw, db in grads]


def input_gradient(model: Model, x, mask) -> tuple[float, np.ndarray]:
    """Loss and its exact gradient with respect to the input pixels."""
    x = _check_input(model, x)
    y = _check_target(model, mask)
    losses, _, dx = _run(model, x[None], y[None], input_grad=True)
    return float(losses[0]), dx[0]


def apply_gradient(model: Model, grads: GradientSet, lr: float) -> Model:
    return model.with_params(
        [(w - lr * g.weight, b - lr * g.bias) for (w, b), g in zip(model.params, grads.per_layer)]
    )


# ---------------------------------------------------------------- jacobians


def local_window_radius(model: Model) -> int | None:
    """Half-width of the input window that determines a single pixel's
    effect on every layer gradient, or None when the model is not a stack of
    same-padded convolutions.

    A perturbation at one pixel moves the head gradient within R pixels
    (R = sum of kernel radii) and layer-i weight gradients within
    2R - S_i (S_i = radii up to layer i). Truncating the image to a window
    corrupts values at the same depths from the window edge, so a radius of
    4R - 2 r_1 keeps every changed contribution exact.
    """
    radii = []
    for layer in model.param_layers:
        if not isinstance(layer, Conv2D) or layer.kernel % 2 == 0 or layer.pad != layer.kernel // 2:
            return None
        radii.append(layer.kernel // 2)
    if not radii:
        return None
    R = sum(radii)
    return 4 * R - 2 * radii[0]


def _jacobian_full(model, x, y, pixels, h):
    c, H, W = model.input_shape
    feats = (np.arange(c)[None, :] * H * W + pixels[:, None]).ravel()  # pixel-major
    n = feats.size
    D = c * H * W
    per_feat = max(1, _CHUNK_ELEMS // (2 * _work_per_sample(model)))
    out = [np.empty((n, p)) for p in model.param_counts()]
    xf = x.ravel()
    for start in range(0, n, per_feat):
        f = feats[start:start + per_feat]
        m = f.size
        Xb = np.broadcast_to(xf, (m, 2, D)).copy()
        Xb[np.arange(m), 0, f] += h
        Xb[np.arange(m), 1, f] -= h
        Xb = Xb.reshape((2 * m,) + model.input_shape)
        Yb = np.broadcast_to(y, (2 * m,) + y.shape)
        gs = per_sample_gradients(model, Xb, Yb)
        for l, g in enumerate(gs):
            g = g.reshape(m, 2, -1)
            out[l][start:start + m] = (g[:, 0] - g[:, 1]) / (2 * h)
    return [o.reshape(pixels.size, c, -1).transpose(2, 1, 0) for o in out]


def _work_per_sample(model, spatial=None):
    c, H, W = model.input_shape
    hw = spatial if spatial is not None else H * W
    work = c * hw
    for layer in model.param_layers:
        if isinstance(layer, Conv2D):
            work = max(work, layer.in_ch * layer.kernel**2 * hw, layer.out_ch * hw)
        else:
            work = max(work, layer.in_features * layer.out_features)
    return work


def _jacobian_local(model, x, y, pixels, h, radius):
    c, H, W = model.input_shape
    win = 2 * radius + 1
    pad = ((0, 0), (radius, radius), (radius, radius))
    xp = np.pad(x, pad)
    yp = np.pad(y.reshape(model._raw_output_shape), pad)
    vp = np.pad(np.ones((1, H, W)), pad)
    xw = sliding_window_view(xp, (win, win), axis=(1, 2))  # (c, H, W, win, win)
    yw = sliding_window_view(yp, (win, win), axis=(1, 2))
    vw = sliding_window_view(vp, (win, win), axis=(1, 2))
    rows, cols = np.divmod(pixels, W)
    n_out = math.prod(model.output_shape)
    per_pix = max(1, _CHUNK_ELEMS // (2 * c * _work_per_sample(model, win * win)))
    out = [np.empty((pixels.size, c, p)) for p in model.param_counts()]
    ch = np.arange(c)
    for start in range(0, pixels.size, per_pix):
        r = rows[start:start + per_pix]
        q = cols[start:start + per_pix]
        m = r.size
        base = xw[:, r, q].transpose(1, 0, 2, 3)  # (m, c, win, win)
        Xb = np.broadcast_to(base[:, None, None], (m, c, 2, c, win, win)).copy()
        Xb[:, ch, 0, ch, radius, radius] += h
        Xb[:, ch, 1, ch, radius, radius] -= h
        Xb = Xb.reshape(m * c * 2, c, win, win)
        Yb = np.repeat(yw[:, r, q].transpose(1, 0, 2, 3), 2 * c, axis=0)
        Vb = np.repeat(vw[:, r, q].transpose(1, 0, 2, 3), 2 * c, axis=0)
        _, grads, _ = _run(model, Xb, Yb, valid=Vb, n_out=n_out, per_sample=True)
        for l, (dw, db) in enumerate(grads):
            g = np.concatenate([dw.reshape(m * c * 2, -1), db.reshape(m * c * 2, -1)], axis=1)
            g = g.reshape(m, c, 2, -1)
            out[l][start:start + m] = (g[:, :, 0] - g[:, :, 1]) / (2 * h)
    return [o.transpose(2, 1, 0) for o in out]


def jacobian_columns(model: Model, x, mask, pixels=None, h: float = 1e-4, method: str = "auto"):
    """Finite-difference Jacobian of every layer gradient w.r.t. selected pixels.

    ``pixels`` are flat ``row * W + col`` indices (all pixels when None).
    Returns one ``(P_l, c, len(pixels))`` array per parameterized layer.
    ``method`` is ``"full"`` (perturb the whole image), ``"local"`` (window
    per pixel, conv stacks only) or ``"auto"``.
    """
    if not (h > 0 and math.isfinite(h)):
        raise ValueError(f"finite-difference step must be positive and finite, got {h}")
    x = _check_input(model, x)
    y = _check_target(model, mask)
    c, H, W = model.input_shape
    pixels = np.arange(H * W) if pixels is None else np.asarray(pixels, dtype=np.intp).ravel()
    if pixels.size and (pixels.min() < 0 or pixels.max() >= H * W):
        raise ShapeError("pixel index out of range")
    radius = local_window_radius(model)
    if method == "auto":
        method = "local" if radius is not None else "full"
    if method == "local":
        if radius is None:
            raise ValueError("local Jacobian needs a stack of same-padded convolutions")
        cols = _jacobian_local(model, x, y, pixels, h, radius)
    elif method == "full":
        cols = _jacobian_full(model, x, y, pixels, h)
    else:
        raise ValueError(f"unknown Jacobian method {method!r}")
    for l, j in enumerate(cols):
        if not np.all(np.isfinite(j)):
            raise NumericError(f"non-finite Jacobian entries in layer {l} (step h={h})")
    return cols


def grad_input_jacobian(model: Model, x, mask, layer: int, h: float = 1e-4, method: str = "auto"):
    """Jacobian of layer ``layer``'s gradient w.r.t. the input, shape (P_l, c, H, W)."""
    if not 0 <= layer < model.layer_count:
        raise IndexError(f"layer {layer} out of range for {model.layer_count} layers")
    cols = jacobian_columns(model, x, mask, None, h, method)[layer]
    return cols.reshape((cols.shape[0],) + model.input_shape)


# ---------------------------------------------------------------- checkpoints

MODEL_MAGIC = b"FEDRE-M1"
GRAD_MAGIC = b"FEDRE-G1"
_KIND = {Dense: 1, Conv2D: 2, ReLU: 3, SigmoidHead: 4, LinearHead: 5}


def model_to_bytes(model: Model) -> bytes:
    out = [MODEL_MAGIC, b"".join(binio.u32(v) for v in model.input_shape)]
    out.append(binio.f64s(np.array([model.input_offset])))
    out.append(binio.u8(len(model.output_shape)))
    out += [binio.u32(v) for v in model.output_shape]
    out.append(binio.u32(len(model.layers)))
    for layer in model.layers:
        out.append(binio.u8(_KIND[type(layer)]))
        if isinstance(layer, Dense):
            out += [binio.u32(layer.in_features), binio.u32(layer.out_features), binio.u8(int(layer.bias))]
        elif isinstance(layer, Conv2D):
            out += [binio.u32(v) for v in (layer.in_ch, layer.out_ch, layer.kernel, layer.pad)]
    for w, b in model.params:
        out += [binio.f64s(w), binio.f64s(b)]
    return b"".join(out)


def model_from_bytes(data: bytes) -> Model:
    r = binio.Reader(data)
    r.magic(MODEL_MAGIC)
    input_shape = tuple(r.u32("input shape") for _ in range(3))
    offset = float(r.f64s(1, "input offset")[0])
    output_shape = tuple(r.u32("output shape") for _ in range(r.u8("output rank")))
    layers = []
    for i in range(r.u32("layer count")):
        start = r.pos
        kind = r.u8(f"layer {i} kind")
        if kind == 1:
            layers.append(Dense(r.u32("in"), r.u32("out"), bool(r.u8("bias flag"))))
        elif kind == 2:
            layers.append(Conv2D(*(r.u32("conv field") for _ in range(4))))
        elif kind in (3, 4, 5):
            layers.append({3: ReLU, 4: SigmoidHead, 5: LinearHead}[kind]())
        else:
            raise FormatError(f"unknown layer kind {kind}", start)
    params = []
    for i, layer in enumerate(l for l in layers if isinstance(l, PARAM_LAYERS)):
        wshape, bshape = _param_shapes(layer)
        w = r.f64s(math.prod(wshape), f"layer {i} weights").reshape(wshape)
        b = r.f64s(math.prod(bshape), f"layer {i} bias").reshape(bshape)
        params.append((w, b))
    r.finish()
    return Model(input_shape, layers, params, output_shape, offset)


def save_model(model: Model, path) -> None:
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())


def gradients_to_bytes(grads: GradientSet) -> bytes:
    out = [GRAD_MAGIC, binio.u32(len(grads.per_layer)), binio.u32(grads.sample_count)]
    for g in grads.per_layer:
        for arr in (g.weight, g.bias):
            out.append(binio.u8(arr.ndim))
            out += [binio.u32(v) for v in arr.shape]
    for g in grads.per_layer:
        out += [binio.f64s(g.weight), binio.f64s(g.bias)]
    return b"".join(out)


def gradients_from_bytes(data: bytes) -> GradientSet:
    r = binio.Reader(data)
    r.magic(GRAD_MAGIC)
    n = r.u32("layer count")
    count = r.u32("sample count")
    shapes = []
    for i in range(n):
        ws = tuple(r.u32(f"layer {i} weight dim") for _ in range(r.u8("rank")))
        bs = tuple(r.u32(f"layer {i} bias dim") for _ in range(r.u8("rank")))
        shapes.append((ws, bs))
    layers = []
    for i, (ws, bs) in enumerate(shapes):
        w = r.f64s(math.prod(ws), f"layer {i} weight gradient").reshape(ws)
        b = r.f64s(math.prod(bs), f"layer {i} bias gradient").reshape(bs)
        layers.append(LayerGradient(w, b))
    r.finish()
    return GradientSet(layers, count)


def save_gradients(grads: GradientSet, path) -> None:
    Path(path).write_bytes(gradients_to_bytes(grads))


def load_gradients(path) -> GradientSet:
    return gradients_from_bytes(Path(path).read_bytes())
