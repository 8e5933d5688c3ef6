"""Mask fusion and the trainable fully-convolutional stacking meta-learner.

Bitwise fusion semantics: AND and OR operate on already-binarized
constituent masks (a pixel is on iff every / at least one input pixel is
on), while MAX operates on the raw probabilities before any
thresholding and returns both the pointwise-maximum map and its
binarization. Keeping MAX on probabilities is what makes it a distinct
method from OR; on binarized inputs the two coincide.

The stacking meta-learner is a fixed five-layer fully-convolutional
network over a channel-concatenated feature stack: 256, 128, 64 and 32
filters of 3x3 with ReLU, then a single 1x1 filter with sigmoid, all
same-padded so the output keeps the input's spatial dims. Constituent
models are frozen and appear only through their exported maps; only the
meta-learner trains, by mini-batch Adam on the focal Tversky loss
against boundary-uncertainty soft labels. Training is bit-reproducible
under a fixed seed: sample order, initialization, and gradient
reduction order are all deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DecodeError, NumericError, ShapeMismatchError
from .imageio import load_feature_stack, store_feature_stack
from .losses import TverskyConfig, focal_tversky_loss
from .morpho import BoundaryUncertaintyConfig, boundary_soft_labels
from .ndtensor import (AdamState, ConvKernel, adam_step, conv2d_backward,
                       conv2d_forward, relu_forward_backward,
                       sigmoid_forward_backward)

_FILTERS = (256, 128, 64, 32, 1)
_KERNEL_SIZES = (3, 3, 3, 3, 1)


# ---------------------------------------------------------------------------
# Bitwise fusion

def _image_list(masks):
    out = []
    for idx, m in enumerate(masks):
        arr = np.asarray(m)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"mask {idx} must be 2-D, got {arr.shape}")
        if out and arr.shape != out[0].shape:
            raise ShapeMismatchError(
                f"mask {idx} shape {arr.shape} != mask 0 shape {out[0].shape}")
        out.append(arr)
    if len(out) < 2:
        raise ValueError(f"fusion needs at least 2 inputs, got {len(out)}")
    return out


def fuse_and(masks):
    """Pixel on iff every input pixel is on (> 0)."""
    stack = np.stack([m > 0 for m in _image_list(masks)])
    return stack.all(axis=0).astype(np.uint8)


def fuse_or(masks):
    """Pixel on iff at least one input pixel is on (> 0)."""
    stack = np.stack([m > 0 for m in _image_list(masks)])
    return stack.any(axis=0).astype(np.uint8)


def binarize(probmap, threshold=0.5):
    """Hard mask from a probability map: foreground where p >= threshold."""
    return (np.asarray(probmap) >= threshold).astype(np.uint8)


def fuse_max(probmaps, binarize_threshold=0.5):
    """Pointwise maximum of probability maps, plus its binarization."""
    maps = _image_list(probmaps)
    for idx, m in enumerate(maps):
        if m.min() < 0.0 or m.max() > 1.0:
            raise ValueError(f"probability map {idx} has values outside [0, 1]")
    fused = np.max(np.stack([m.astype(np.float32) for m in maps]), axis=0)
    return fused, binarize(fused, binarize_threshold)


# ---------------------------------------------------------------------------
# Meta-learner definition

@dataclass(frozen=True)
class MetaLearnerParams:
    """The five ConvKernels of the stacking network, first to last."""

    layers: tuple
    seed: int = 0

    def __post_init__(self):
        layers = tuple(self.layers)
        if len(layers) != len(_FILTERS):
            raise ShapeMismatchError(
                f"expected {len(_FILTERS)} layers, got {len(layers)}")
        prev = layers[0].in_channels
        for i, (layer, filters, ksize) in enumerate(
                zip(layers, _FILTERS, _KERNEL_SIZES)):
            if layer.out_channels != filters:
                raise ShapeMismatchError(
                    f"layer {i} must have {filters} filters, "
                    f"got {layer.out_channels}")
            if layer.kernel_size != (ksize, ksize):
                raise ShapeMismatchError(
                    f"layer {i} kernel must be {ksize}x{ksize}, "
                    f"got {layer.kernel_size}")
            if layer.in_channels != prev:
                raise ShapeMismatchError(
                    f"layer {i} expects {layer.in_channels} input channels "
                    f"but the previous layer emits {prev}")
            prev = layer.out_channels
        object.__setattr__(self, "layers", layers)

    @property
    def in_channels(self):
        return self.layers[0].in_channels

    def parameter_count(self):
        return sum(k.weights.size + k.bias.size for k in self.layers)

    def parameter_arrays(self):
        """Flat parameter list (w0, b0, w1, b1, ...) for the optimizer."""
        out = []
        for k in self.layers:
            out.append(k.weights)
            out.append(k.bias)
        return out

    @classmethod
    def from_arrays(cls, arrays, seed=0):
        layers = tuple(ConvKernel(arrays[2 * i], arrays[2 * i + 1])
                       for i in range(len(_FILTERS)))
        return cls(layers=layers, seed=seed)


def build_metalearner(in_channels, seed=0):
    """He fan-in initialization for the ReLU stack, a smaller fan-in
    scale for the sigmoid head, zero biases."""
    if in_channels < 1:
        raise ValueError(f"in_channels must be >= 1, got {in_channels}")
    rng = np.random.default_rng(seed)
    layers = []
    c_in = in_channels
    for i, (c_out, k) in enumerate(zip(_FILTERS, _KERNEL_SIZES)):
        fan_in = c_in * k * k
        scale = math.sqrt(2.0 / fan_in) if i < len(_FILTERS) - 1 else \
            math.sqrt(1.0 / fan_in)
        weights = (rng.standard_normal((c_out, c_in, k, k)) * scale).astype(
            np.float32)
        layers.append(ConvKernel(weights, np.zeros(c_out, dtype=np.float32)))
        c_in = c_out
    return MetaLearnerParams(layers=tuple(layers), seed=seed)


def _check_stack(params, stack):
    arr = np.asarray(stack)
    if arr.ndim != 3:
        raise ShapeMismatchError(
            f"feature stack must be (C, H, W), got shape {arr.shape}")
    if arr.shape[0] != params.in_channels:
        raise ShapeMismatchError(
            f"stack has {arr.shape[0]} channels but the meta-learner "
            f"expects {params.in_channels}")
    return arr


def _forward(params, stack):
    h = _check_stack(params, stack)
    cache = []
    for i, layer in enumerate(params.layers):
        z = conv2d_forward(h, layer)
        if i < len(params.layers) - 1:
            y, local = relu_forward_backward(z)
        else:
            y, local = sigmoid_forward_backward(z)
        cache.append((h, local))
        h = y
    return h, cache


def predict_metalearner(params, stack):
    """Forward pass; returns an (H, W) probability map strictly in (0, 1)."""
    out, _ = _forward(params, stack)
    return out[0].astype(np.float32)


def _loss_and_grads(params, stack, soft_target, tversky):
    """Loss plus gradients for every parameter array, back to front."""
    out, cache = _forward(params, stack)
    loss, dpred = focal_tversky_loss(soft_target, out[0], tversky)
    grads = [None] * (2 * len(params.layers))
    # gradients ride in float64 end to end; only parameters and
    # activations are stored in 32-bit
    g = dpred[None, :, :]
    for i in range(len(params.layers) - 1, -1, -1):
        h_in, local = cache[i]
        gz = g * local.astype(np.float64)
        g, gw, gb = conv2d_backward(h_in, params.layers[i], gz)
        grads[2 * i] = gw
        grads[2 * i + 1] = gb
    return loss, out[0], grads


# ---------------------------------------------------------------------------
# Training

@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 1e-3
    epochs: int = 20
    batch_size: int = 4
    seed: int = 0
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    dice_target: float = None

    def __post_init__(self):
        if self.learning_rate < 0.0:
            raise ValueError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class TrainRun:
    """Per-epoch loss history and the best-checkpoint bookkeeping."""

    hyper: HyperParams
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_dice: list = field(default_factory=list)
    best_epoch: int = -1
    input_channels: int = 0
    input_mode: str = "feature-stacks"

    def to_dict(self):
        return {
            "hyper": asdict(self.hyper),
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "train_dice": self.train_dice,
            "best_epoch": self.best_epoch,
            "input_channels": self.input_channels,
            "input_mode": self.input_mode,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _hard_dice(prediction, gt_mask):
    pred = prediction >= 0.5
    gt = np.asarray(gt_mask).astype(bool)
    inter = int((pred & gt).sum())
    total = int(pred.sum()) + int(gt.sum())
    return 1.0 if total == 0 else 2.0 * inter / total


def _prepare_pairs(pairs, boundary, what):
    stacks, gts, softs = [], [], []
    channels = None
    for idx, (stack, gt) in enumerate(pairs):
        arr = np.asarray(stack, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeMismatchError(
                f"{what} sample {idx}: stack must be (C, H, W), got {arr.shape}")
        if channels is None:
            channels = arr.shape[0]
        elif arr.shape[0] != channels:
            raise ShapeMismatchError(
                f"{what} sample {idx} has {arr.shape[0]} channels but sample 0 "
                f"has {channels}")
        gt = np.asarray(gt)
        if gt.shape != arr.shape[1:]:
            raise ShapeMismatchError(
                f"{what} sample {idx}: mask shape {gt.shape} != stack spatial "
                f"dims {arr.shape[1:]}")
        stacks.append(arr)
        gts.append(gt)
        softs.append(boundary_soft_labels(gt, boundary).astype(np.float32))
    return stacks, gts, softs, channels


def train_metalearner(train_pairs, val_pairs=(), hyper=None, tversky=None,
                      boundary=None, init_params=None):
    """Mini-batch Adam descent on the focal Tversky + soft-boundary loss.

    ``train_pairs`` and ``val_pairs`` are sequences of (stack, gt_mask).
    Returns (params at the best monitored loss, TrainRun). The monitored
    loss is the validation loss when a validation set is given, else the
    train loss. The learning rate halves after ``plateau_patience``
    epochs without improvement, and training stops early once the
    monitored train Dice exceeds ``dice_target`` (when set).
    """
    hyper = hyper or HyperParams()
    tversky = tversky or TverskyConfig()
    boundary = boundary or BoundaryUncertaintyConfig()
    train_pairs = list(train_pairs)
    if not train_pairs:
        raise ValueError("training set is empty")
    stacks, gts, softs, channels = _prepare_pairs(train_pairs, boundary, "train")
    val_stacks, _, val_softs, val_channels = _prepare_pairs(
        list(val_pairs), boundary, "validation")
    if val_channels is not None and val_channels != channels:
        raise ShapeMismatchError(
            f"validation stacks have {val_channels} channels, train has {channels}")

    params = init_params or build_metalearner(channels, hyper.seed)
    if params.in_channels != channels:
        raise ShapeMismatchError(
            f"initial params expect {params.in_channels} channels, data has "
            f"{channels}")
    arrays = params.parameter_arrays()
    state = AdamState.fresh(arrays, hyper.learning_rate)
    shuffle_rng = np.random.default_rng((hyper.seed, 1))

    run = TrainRun(hyper=hyper, input_channels=channels)
    best_loss = math.inf
    best_arrays = [a.copy() for a in arrays]
    stale = 0
    n = len(stacks)
    for epoch in range(hyper.epochs):
        order = shuffle_rng.permutation(n)
        sample_losses = []
        sample_dices = []
        current = MetaLearnerParams.from_arrays(arrays, seed=params.seed)
        for batch_no, start in enumerate(range(0, n, hyper.batch_size)):
            batch = order[start:start + hyper.batch_size]
            acc = [np.zeros(a.shape, dtype=np.float64) for a in arrays]
            for idx in batch:
                loss, pred, grads = _loss_and_grads(
                    current, stacks[idx], softs[idx], tversky)
                if not math.isfinite(loss):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, batch {batch_no}, "
                        f"sample {idx}")
                sample_losses.append(loss)
                sample_dices.append(_hard_dice(pred, gts[idx]))
                for a, g in zip(acc, grads):
                    a += g
            scale = 1.0 / len(batch)
            arrays, state = adam_step(arrays, [a * scale for a in acc], state)
            current = MetaLearnerParams.from_arrays(arrays, seed=params.seed)
        run.train_loss.append(math.fsum(sample_losses) / n)
        run.train_dice.append(math.fsum(sample_dices) / n)
        if val_stacks:
            v_losses = [
                focal_tversky_loss(vs, predict_metalearner(current, vstack),
                                   tversky)[0]
                for vstack, vs in zip(val_stacks, val_softs)]
            run.val_loss.append(math.fsum(v_losses) / len(v_losses))
            monitored = run.val_loss[-1]
        else:
            monitored = run.train_loss[-1]
        if monitored < best_loss:
            best_loss = monitored
            best_arrays = [a.copy() for a in arrays]
            run.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= hyper.plateau_patience:
                state = state.with_learning_rate(
                    state.learning_rate * hyper.plateau_factor)
                stale = 0
        if hyper.dice_target is not None and run.train_dice[-1] > hyper.dice_target:
            break
    return MetaLearnerParams.from_arrays(best_arrays, seed=params.seed), run


# ---------------------------------------------------------------------------
# Serialization: JSON header plus one FST container per layer tensor

def save_metalearner(params, path, hyper=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, layer in enumerate(params.layers):
        o, c, kh, kw = layer.weights.shape
        wname = f"{path.name}.layer{i}.weights.fst"
        bname = f"{path.name}.layer{i}.bias.fst"
        store_feature_stack(layer.weights.reshape(o, c * kh, kw),
                            path.parent / wname)
        store_feature_stack(layer.bias.reshape(o, 1, 1), path.parent / bname)
        layers.append({"out_channels": o, "in_channels": c,
                       "kernel_h": kh, "kernel_w": kw,
                       "weights_file": wname, "bias_file": bname})
    meta = {
        "format": "stack-metalearner-v1",
        "in_channels": params.in_channels,
        "seed": params.seed,
        "hyper": asdict(hyper) if hyper is not None else None,
        "layers": layers,
    }
    path.write_text(json.dumps(meta, indent=2) + "\n")


def load_metalearner(path):
    path = Path(path)
    try:
        meta = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DecodeError(f"unparseable meta-learner header: {exc}",
                          path=path) from None
    if meta.get("format") != "stack-metalearner-v1":
        raise DecodeError(f"unknown meta-learner format {meta.get('format')!r}",
                          path=path)
    arrays = []
    for spec in meta["layers"]:
        w = load_feature_stack(path.parent / spec["weights_file"])
        shape = (spec["out_channels"], spec["in_channels"],
                 spec["kernel_h"], spec["kernel_w"])
        arrays.append(w.reshape(shape))
        arrays.append(load_feature_stack(
            path.parent / spec["bias_file"]).reshape(spec["out_channels"]))
    return MetaLearnerParams.from_arrays(arrays, seed=meta.get("seed", 0))
