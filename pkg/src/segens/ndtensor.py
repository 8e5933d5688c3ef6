"""Minimal dense-tensor kernel behind the stacking meta-learner.

Tensors are numpy arrays laid out (channels, height, width) in row-major
order. The production path stores values in float32; every reduction
(convolution window sums, Adam moments, finite differences) runs in
float64 and the result is cast back down to float32 unless some operand
was float64, in which case the result stays 64-bit. Gradient checks
exploit this: perturbing a float64 copy of any operand yields a fully
64-bit loss evaluation.

All operations are pure: inputs are never mutated and identical inputs
produce bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError, ShapeMismatchError


def _out_dtype(*arrays):
    if any(np.asarray(a).dtype == np.float64 for a in arrays):
        return np.float64
    return np.float32


def _require_chw(x, name="input"):
    arr = np.asarray(x)
    if arr.ndim != 3:
        raise ShapeMismatchError(
            f"{name} must be (channels, height, width), got shape {arr.shape}"
        )
    return arr


@dataclass(frozen=True)
class ConvKernel:
    """Odd-sized 2-D convolution kernel with a per-output-channel bias.

    ``weights`` has shape (out_channels, in_channels, kernel_h, kernel_w)
    and ``bias`` shape (out_channels,).
    """

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights)
        b = np.asarray(self.bias)
        if w.ndim != 4:
            raise ShapeMismatchError(
                f"weights must be 4-D (out, in, kh, kw), got shape {w.shape}"
            )
        out_ch, _, kh, kw = w.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel dims must be odd for same-padding, got {kh}x{kw}")
        if b.shape != (out_ch,):
            raise ShapeMismatchError(
                f"bias must have shape ({out_ch},), got {b.shape}"
            )
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise NumericError("kernel contains non-finite values")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel_size(self):
        return self.weights.shape[2], self.weights.shape[3]


def _im2col(x, kh, kw):
    """Unfold a zero-padded (C, H, W) array into (C*kh*kw, H*W) float64.

    The first axis is ordered channel-major, then kernel row, then kernel
    column, matching the row-major flattening of ConvKernel.weights.
    """
    ch, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    padded = np.zeros((ch, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    padded[:, ph:ph + h, pw:pw + w] = x
    win = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(1, 2))
    # (C, H, W, kh, kw) -> (C, kh, kw, H, W) -> (C*kh*kw, H*W)
    return np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(
        ch * kh * kw, h * w
    )


def conv2d_forward(x, kernel):
    """Same-padded 2-D convolution of a (C, H, W) input, output (O, H, W).

    Borders are zero padded so spatial dims are preserved.
    """
    x = _require_chw(x)
    out_ch, in_ch, kh, kw = kernel.weights.shape
    if x.shape[0] != in_ch:
        raise ShapeMismatchError(
            f"input has {x.shape[0]} channels but kernel expects {in_ch}"
        )
    _, h, w = x.shape
    cols = _im2col(x, kh, kw)
    wmat = kernel.weights.astype(np.float64).reshape(out_ch, in_ch * kh * kw)
    out = wmat @ cols + kernel.bias.astype(np.float64)[:, None]
    out = out.reshape(out_ch, h, w)
    if not np.isfinite(out).all():
        raise NumericError("convolution produced non-finite values")
    return out.astype(_out_dtype(x, kernel.weights, kernel.bias))


def conv2d_backward(x, kernel, grad_out):
    """Gradients of a scalar loss through conv2d_forward.

    ``grad_out`` is the upstream gradient with the output's shape.
    Returns (grad_input, grad_weights, grad_bias).
    """
    x = _require_chw(x)
    g = _require_chw(grad_out, "grad_out")
    out_ch, in_ch, kh, kw = kernel.weights.shape
    if x.shape[0] != in_ch:
        raise ShapeMismatchError(
            f"input has {x.shape[0]} channels but kernel expects {in_ch}"
        )
    _, h, w = x.shape
    if g.shape != (out_ch, h, w):
        raise ShapeMismatchError(
            f"grad_out shape {g.shape} does not match output shape {(out_ch, h, w)}"
        )
    ph, pw = kh // 2, kw // 2
    cols = _im2col(x, kh, kw)
    gmat = g.astype(np.float64).reshape(out_ch, h * w)
    grad_bias = gmat.sum(axis=1)
    grad_weights = (gmat @ cols.T).reshape(out_ch, in_ch, kh, kw)

    wmat = kernel.weights.astype(np.float64).reshape(out_ch, in_ch * kh * kw)
    gcols = (wmat.T @ gmat).reshape(in_ch, kh, kw, h, w)
    gpad = np.zeros((in_ch, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            gpad[:, i:i + h, j:j + w] += gcols[:, i, j]
    grad_input = gpad[:, ph:ph + h, pw:pw + w]

    dt = _out_dtype(x, kernel.weights, g)
    return grad_input.astype(dt), grad_weights.astype(dt), grad_bias.astype(dt)


def relu_forward_backward(x):
    """ReLU value and its local derivative mask (1 where x > 0)."""
    x = np.asarray(x)
    y = np.maximum(x, 0)
    return y, (x > 0).astype(y.dtype)


def sigmoid_forward_backward(x):
    """Numerically stable sigmoid and its local derivative y*(1-y).

    The derivative is evaluated as e^-|x| / (1 + e^-|x|)^2, which equals
    y*(1-y) but does not cancel to an exact zero once y rounds to 1, so a
    saturated unit keeps an escape gradient.
    """
    x = np.asarray(x)
    x64 = x.astype(np.float64)
    y64 = np.empty_like(x64)
    pos = x64 >= 0
    y64[pos] = 1.0 / (1.0 + np.exp(-x64[pos]))
    ex = np.exp(x64[~pos])
    y64[~pos] = ex / (1.0 + ex)
    em = np.exp(-np.abs(x64))
    deriv = em / (1.0 + em) ** 2
    dt = _out_dtype(x)
    return y64.astype(dt), deriv.astype(dt)


@dataclass(frozen=True)
class AdamState:
    """Bias-corrected Adam accumulators for a list of parameter arrays.

    ``t`` counts completed steps; moments are kept in float64.
    """

    m: tuple
    v: tuple
    t: int
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        m = tuple(np.zeros(np.shape(p), dtype=np.float64) for p in params)
        v = tuple(np.zeros(np.shape(p), dtype=np.float64) for p in params)
        return cls(m=m, v=v, t=0, learning_rate=learning_rate,
                   beta1=beta1, beta2=beta2, epsilon=epsilon)

    def with_learning_rate(self, learning_rate):
        return replace(self, learning_rate=learning_rate)


def adam_step(params, grads, state):
    """One bias-corrected Adam update. Returns (new_params, new_state).

    Inputs are untouched; parameter dtype is preserved.
    """
    if not (len(params) == len(grads) == len(state.m)):
        raise ShapeMismatchError(
            f"got {len(params)} params, {len(grads)} grads, "
            f"state for {len(state.m)}"
        )
    t = state.t + 1
    corr1 = 1.0 - state.beta1 ** t
    corr2 = 1.0 - state.beta2 ** t
    new_params, new_m, new_v = [], [], []
    for idx, (p, g) in enumerate(zip(params, grads)):
        p = np.asarray(p)
        g64 = np.asarray(g, dtype=np.float64)
        if g64.shape != p.shape:
            raise ShapeMismatchError(
                f"parameter {idx}: grad shape {g64.shape} != param shape {p.shape}"
            )
        if not np.isfinite(g64).all():
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(g64))[0])
            raise NumericError(
                f"non-finite gradient for parameter {idx} at index {bad}"
            )
        m = state.beta1 * state.m[idx] + (1.0 - state.beta1) * g64
        v = state.beta2 * state.v[idx] + (1.0 - state.beta2) * g64 * g64
        step = state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
        new_params.append((p.astype(np.float64) - step).astype(p.dtype))
        new_m.append(m)
        new_v.append(v)
    return new_params, replace(state, m=tuple(new_m), v=tuple(new_v), t=t)


def finite_diff_grad(f, params, step=1e-4):
    """Central-difference gradient oracle, computed coordinatewise in float64.

    ``f`` maps an array shaped like ``params`` to a finite scalar.
    """
    base = np.array(params, dtype=np.float64)
    grad = np.zeros(base.shape, dtype=np.float64)
    for idx in np.ndindex(base.shape):
        hi = base.copy()
        hi[idx] += step
        lo = base.copy()
        lo[idx] -= step
        f_hi = float(f(hi))
        f_lo = float(f(lo))
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise NumericError(f"function is not finite near coordinate {idx}")
        grad[idx] = (f_hi - f_lo) / (2.0 * step)
    return grad
