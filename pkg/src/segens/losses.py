"""Differentiable overlap losses and the mixed MS-SSIM + MAE loss.

Soft overlap counts for a ground truth t and prediction p (both in
[0, 1], equal shapes):

    TP = sum(t * p)    FN = sum(t * (1 - p))    FP = sum((1 - t) * p)

A small stabilizer is added to the numerator and denominator of every
ratio so empty masks do not divide 0 by 0. The Tversky index weights the
FN term by ``fn_weight`` and the FP term by its complement; at
fn_weight = 0.5 it is exactly the (soft) Dice score, and ``dice_soft``
is implemented through that identity. The focal Tversky loss is
(1 - TI) ** focal_exponent and comes with its analytic gradient with
respect to the prediction; ``ft_bu_loss`` is the same loss measured
against boundary-uncertainty soft labels of a hard mask and is the
training loss of the stacking meta-learner.

The mixed loss weighs structural dissimilarity against mean absolute
error: similarity_weight * (1 - MS-SSIM) + mae_weight * MAE. MS-SSIM
uses an 11x11 Gaussian window (sigma 1.5), 2x2 mean-pool downsampling,
the usual five scale weights, and stabilizers C1 = (0.01 L)^2,
C2 = (0.03 L)^2 with dynamic range L = 1; uint8 inputs are rescaled by
1/255 to match.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .morpho import BoundaryUncertaintyConfig, boundary_soft_labels

_SCALE_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


@dataclass(frozen=True)
class TverskyConfig:
    fn_weight: float = 0.7
    focal_exponent: float = 0.75
    smooth: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.fn_weight <= 1.0:
            raise ValueError(f"fn_weight must be in [0, 1], got {self.fn_weight}")
        if self.focal_exponent <= 0.0:
            raise ValueError(f"focal_exponent must be > 0, got {self.focal_exponent}")
        if self.smooth <= 0.0:
            raise ValueError(f"smooth must be > 0, got {self.smooth}")


@dataclass(frozen=True)
class MixedLossConfig:
    similarity_weight: float = 0.84
    mae_weight: float = 0.16
    scales: int = 5
    window_size: int = 11
    window_sigma: float = 1.5

    def __post_init__(self):
        if self.similarity_weight < 0.0 or self.mae_weight < 0.0:
            raise ValueError("loss weights must be non-negative")
        if not 1 <= self.scales <= len(_SCALE_WEIGHTS):
            raise ValueError(f"scales must be in 1..{len(_SCALE_WEIGHTS)}")
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and >= 3, got {self.window_size}")
        if self.window_sigma <= 0.0:
            raise ValueError(f"window_sigma must be > 0, got {self.window_sigma}")


def _soft_counts(target, prediction):
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(prediction, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeMismatchError(
            f"target shape {t.shape} != prediction shape {p.shape}")
    tp = float((t * p).sum())
    fn = float((t * (1.0 - p)).sum())
    fp = float(((1.0 - t) * p).sum())
    return tp, fn, fp


def iou_soft(target, prediction, smooth=1e-6):
    tp, fn, fp = _soft_counts(target, prediction)
    return (tp + smooth) / (tp + fp + fn + smooth)


def iou_loss(target, prediction, smooth=1e-6):
    return 1.0 - iou_soft(target, prediction, smooth)


def tversky_index(target, prediction, fn_weight=0.7, smooth=1e-6):
    if not 0.0 <= fn_weight <= 1.0:
        raise ValueError(f"fn_weight must be in [0, 1], got {fn_weight}")
    tp, fn, fp = _soft_counts(target, prediction)
    return (tp + smooth) / (tp + fn_weight * fn + (1.0 - fn_weight) * fp + smooth)


def dice_soft(target, prediction, smooth=1e-6):
    # Tversky at fn_weight 0.5; identical to 2TP/(2TP+FP+FN) with the
    # stabilizer doubled, and bit-for-bit equal to tversky_index(0.5).
    return tversky_index(target, prediction, fn_weight=0.5, smooth=smooth)


def dice_loss(target, prediction, smooth=1e-6):
    return 1.0 - dice_soft(target, prediction, smooth)


def focal_tversky_loss(target, prediction, config=None):
    """(1 - TI) ** focal_exponent and its gradient w.r.t. the prediction.

    Returns (loss, grad) with grad a float64 array of the prediction's
    shape. At a perfect prediction the loss sits at its minimum and the
    gradient is reported as zero.
    """
    cfg = config or TverskyConfig()
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(prediction, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeMismatchError(
            f"target shape {t.shape} != prediction shape {p.shape}")
    tp = float((t * p).sum())
    fn = float((t * (1.0 - p)).sum())
    fp = float(((1.0 - t) * p).sum())
    num = tp + cfg.smooth
    den = tp + cfg.fn_weight * fn + (1.0 - cfg.fn_weight) * fp + cfg.smooth
    ti = num / den
    base = 1.0 - ti
    if base <= 0.0:
        return 0.0, np.zeros_like(p)
    loss = base ** cfg.focal_exponent
    # d(TI)/dp_i = (t_i * den - num * (1 - fn_weight)) / den^2
    dti = (t * den - num * (1.0 - cfg.fn_weight)) / (den * den)
    grad = -cfg.focal_exponent * base ** (cfg.focal_exponent - 1.0) * dti
    return loss, grad


def ft_bu_loss(mask, prediction, tversky=None, boundary=None):
    """Focal Tversky loss against boundary-uncertainty soft labels.

    ``mask`` is the hard {0,1} ground truth; returns (loss, grad) like
    ``focal_tversky_loss``.
    """
    soft = boundary_soft_labels(mask, boundary or BoundaryUncertaintyConfig())
    return focal_tversky_loss(soft, prediction, tversky)


# ---------------------------------------------------------------------------
# MS-SSIM and the mixed loss

def _as_unit_image(x, name):
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be a 2-D image, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


def _gaussian_window(size, sigma):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, window):
    k = window.size
    t = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ window
    return np.lib.stride_tricks.sliding_window_view(t, k, axis=1) @ window


def _ssim_maps(a, b, window):
    mu1 = _filter_valid(a, window)
    mu2 = _filter_valid(b, window)
    s11 = _filter_valid(a * a, window) - mu1 * mu1
    s22 = _filter_valid(b * b, window) - mu2 * mu2
    s12 = _filter_valid(a * b, window) - mu1 * mu2
    luminance = (2.0 * mu1 * mu2 + _C1) / (mu1 * mu1 + mu2 * mu2 + _C1)
    contrast = (2.0 * s12 + _C2) / (s11 + s22 + _C2)
    return luminance, contrast


def _halve(img):
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    return img[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def mean_absolute_error(a, b):
    x = _as_unit_image(a, "a")
    y = _as_unit_image(b, "b")
    if x.shape != y.shape:
        raise ShapeMismatchError(f"image shapes differ: {x.shape} vs {y.shape}")
    return float(np.abs(x - y).mean())


def msssim(a, b, config=None):
    """Multi-scale structural similarity in [0, 1]; 1.0 iff identical."""
    cfg = config or MixedLossConfig()
    x = _as_unit_image(a, "a")
    y = _as_unit_image(b, "b")
    if x.shape != y.shape:
        raise ShapeMismatchError(f"image shapes differ: {x.shape} vs {y.shape}")
    min_size = cfg.window_size * 2 ** (cfg.scales - 1)
    if min(x.shape) < min_size:
        raise ValueError(
            f"image {x.shape} too small for {cfg.scales} scales with an "
            f"{cfg.window_size}x{cfg.window_size} window; needs at least "
            f"{min_size}x{min_size}")
    weights = list(_SCALE_WEIGHTS[:cfg.scales])
    if cfg.scales < len(_SCALE_WEIGHTS):
        total = sum(weights)
        weights = [w / total for w in weights]
    window = _gaussian_window(cfg.window_size, cfg.window_sigma)
    value = 1.0
    for level in range(cfg.scales):
        luminance, contrast = _ssim_maps(x, y, window)
        if level == cfg.scales - 1:
            factor = float((luminance * contrast).mean())
        else:
            factor = float(contrast.mean())
            x = _halve(x)
            y = _halve(y)
        value *= max(factor, 0.0) ** weights[level]
    return min(max(value, 0.0), 1.0)


def mixed_loss(a, b, config=None):
    """similarity_weight * (1 - MS-SSIM) + mae_weight * MAE."""
    cfg = config or MixedLossConfig()
    return (cfg.similarity_weight * (1.0 - msssim(a, b, cfg))
            + cfg.mae_weight * mean_absolute_error(a, b))
