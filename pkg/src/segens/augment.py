"""Offline affine augmentation of image/mask pairs.

Each generated sample applies, in order: an optional horizontal mirror,
a rotation about the image center, and a center zoom. The image is
resampled bilinearly and the mask with nearest-neighbor (so masks stay
strictly binary); samples falling outside the source take value 0, and
zoom factors below 1 pad the exposed border with 0. Coordinates use
half-pixel centers.

Generation is deterministic and order-independent: the RNG stream for
output k is derived from (seed, k), so the same seed always reproduces
the same augmented files byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeMismatchError
from .imageio import ManifestRecord, load_gray, load_mask, store_gray, store_mask


@dataclass(frozen=True)
class AugmentConfig:
    rotation_degrees: tuple = (5.0, 10.0)
    rotate_both_directions: bool = True
    zoom_factors: tuple = (0.8, 1.4)
    mirror_probability: float = 0.5
    count: int = 2000
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.rotation_degrees
        if not 0.0 <= lo <= hi:
            raise ValueError(f"bad rotation range {self.rotation_degrees}")
        zlo, zhi = self.zoom_factors
        if not 0.0 < zlo <= zhi:
            raise ValueError(f"bad zoom range {self.zoom_factors}")
        if not 0.0 <= self.mirror_probability <= 1.0:
            raise ValueError(
                f"mirror probability must be in [0, 1], got {self.mirror_probability}")
        if self.count < 0:
            raise ValueError(f"count must be >= 0, got {self.count}")


def _check_pair(image, mask):
    img = np.asarray(image)
    msk = np.asarray(mask)
    if img.ndim != 2 or msk.ndim != 2:
        raise ShapeMismatchError("image and mask must be 2-D arrays")
    if img.shape != msk.shape:
        raise ShapeMismatchError(
            f"image shape {img.shape} != mask shape {msk.shape}")
    return img, msk


def mirror(image, mask):
    """Horizontal flip applied identically to both; exact involution."""
    img, msk = _check_pair(image, mask)
    return img[:, ::-1].copy(), msk[:, ::-1].copy()


def _sample_nearest(arr, sy, sx):
    h, w = arr.shape
    iy = np.floor(sy).astype(np.int64)
    ix = np.floor(sx).astype(np.int64)
    valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
    out = np.zeros(sy.shape, dtype=arr.dtype)
    out[valid] = arr[iy[valid], ix[valid]]
    return out


def _sample_bilinear(arr, sy, sx):
    h, w = arr.shape
    u = sy - 0.5
    v = sx - 0.5
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fy = u - i0
    fx = v - j0
    acc = np.zeros(sy.shape, dtype=np.float64)
    src = arr.astype(np.float64)
    for di, wy in ((0, 1.0 - fy), (1, fy)):
        for dj, wx in ((0, 1.0 - fx), (1, fx)):
            ii = i0 + di
            jj = j0 + dj
            ok = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
            vals = np.where(ok, src[np.clip(ii, 0, h - 1), np.clip(jj, 0, w - 1)], 0.0)
            acc += wy * wx * vals
    if arr.dtype == np.uint8:
        return np.clip(np.floor(acc + 0.5), 0, 255).astype(np.uint8)
    return acc.astype(np.float32)


def _resample_pair(image, mask, inv):
    """Apply the inverse-map affine ``inv`` (2x2, row/col) about the center."""
    h, w = image.shape
    cy, cx = h / 2.0, w / 2.0
    rows, cols = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    dy = rows - cy
    dx = cols - cx
    sy = inv[0][0] * dy + inv[0][1] * dx + cy
    sx = inv[1][0] * dy + inv[1][1] * dx + cx
    return _sample_bilinear(image, sy, sx), _sample_nearest(mask, sy, sx)


def rotate(image, mask, angle_degrees):
    """Rotate both arrays about the image center by the same angle."""
    img, msk = _check_pair(image, mask)
    if not math.isfinite(angle_degrees):
        raise ValueError(f"angle must be finite, got {angle_degrees}")
    a = math.radians(angle_degrees)
    inv = ((math.cos(a), -math.sin(a)), (math.sin(a), math.cos(a)))
    return _resample_pair(img, msk, inv)


def zoom(image, mask, factor):
    """Scale about the center: factor > 1 magnifies (crops), factor < 1
    shrinks the content into the middle and zero-pads the border."""
    img, msk = _check_pair(image, mask)
    if not (math.isfinite(factor) and factor > 0.0):
        raise ValueError(f"zoom factor must be positive, got {factor}")
    inv = ((1.0 / factor, 0.0), (0.0, 1.0 / factor))
    return _resample_pair(img, msk, inv)


def sample_transform(config, index, source_count):
    """Draw the transform chain for output ``index`` from its own RNG
    stream (seed, index). Returns (source_idx, mirrored, angle, factor)."""
    rng = np.random.default_rng((config.seed, index))
    src = int(rng.integers(source_count))
    mirrored = bool(rng.random() < config.mirror_probability)
    angle = float(rng.uniform(*config.rotation_degrees))
    if config.rotate_both_directions and rng.random() < 0.5:
        angle = -angle
    factor = float(rng.uniform(*config.zoom_factors))
    return src, mirrored, angle, factor


def augment_dataset(records, config, output_dir, image_format="pgm"):
    """Generate ``config.count`` augmented pairs from the train split.

    Writes image/mask files under ``output_dir`` and returns the input
    records plus one new train record per generated pair.
    """
    if image_format not in ("pgm", "png"):
        raise ValueError(f"image_format must be 'pgm' or 'png', got {image_format}")
    records = list(records)
    train = [r for r in records if r.split == "train"]
    if not train:
        raise ValueError("manifest has no train records to augment")
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "." + image_format
    added = []
    for k in range(config.count):
        src_idx, mirrored, angle, factor = sample_transform(config, k, len(train))
        rec = train[src_idx]
        img = load_gray(rec.image)
        msk = load_mask(rec.gtmask)
        if img.shape != msk.shape:
            raise ShapeMismatchError(
                f"{rec.image}: image shape {img.shape} != mask shape {msk.shape}")
        if mirrored:
            img, msk = mirror(img, msk)
        img, msk = rotate(img, msk, angle)
        img, msk = zoom(img, msk, factor)
        img_path = out_dir / f"aug{k:05d}_image{ext}"
        msk_path = out_dir / f"aug{k:05d}_mask{ext}"
        store_gray(img, img_path)
        store_mask(msk, msk_path)
        added.append(ManifestRecord(split="train", image=str(img_path),
                                    gtmask=str(msk_path)))
    return records + added
