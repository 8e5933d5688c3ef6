"""File formats and dataset plumbing.

Pixel data conventions used throughout the package:

* GrayImage   - uint8 array (H, W)
* BinaryMask  - uint8 array (H, W) with values in {0, 1}
* ProbMap     - float32 array (H, W) with values in [0, 1]
* FeatureStack- float32 array (C, H, W), finite values

Masks and probability maps travel as binary 8-bit PGM ("P5") or 8-bit
grayscale PNG files; feature stacks use the FST container: the 4-byte
magic ``FST1``, one UTF-8 text line ``"C H W\\n"`` with the decimal dims,
then C*H*W little-endian IEEE-754 float32 values in channel-major
row-major order.

Manifests are tab-separated text, one record per line:
``split<TAB>image<TAB>gtmask<TAB>pred1,pred2,...<TAB>fst1,fst2,...``
with empty fields allowed and split in {train, validation, test}.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DecodeError, ShapeMismatchError

SPLITS = ("train", "validation", "test")

_PNG_SIG = b"\x89PNG\r\n\x1a\n"
_FST_MAGIC = b"FST1"


# ---------------------------------------------------------------------------
# PGM (binary "P5", 8-bit)

def _decode_pgm(data, path=None):
    if data[:2] != b"P5":
        flavor = data[:2].decode("latin-1", "replace")
        raise DecodeError(f"expected binary PGM magic 'P5', found {flavor!r}",
                          offset=0, path=path)
    pos = 2
    values = []
    starts = []
    while len(values) < 3:
        # skip whitespace and '#' comment lines
        while pos < len(data):
            c = data[pos]
            if c in b" \t\r\n":
                pos += 1
            elif c == ord("#"):
                nl = data.find(b"\n", pos)
                pos = len(data) if nl < 0 else nl + 1
            else:
                break
        start = pos
        while pos < len(data) and data[pos] not in b" \t\r\n":
            pos += 1
        token = data[start:pos]
        if not token:
            raise DecodeError("truncated PGM header", offset=start, path=path)
        try:
            values.append(int(token))
        except ValueError:
            raise DecodeError(f"bad PGM header token {token!r}",
                              offset=start, path=path) from None
        starts.append(start)
    width, height, maxval = values
    if width <= 0 or height <= 0:
        raise DecodeError(f"bad PGM dimensions {width}x{height}",
                          offset=starts[0], path=path)
    if not 0 < maxval <= 255:
        raise DecodeError(f"unsupported maxval {maxval} (8-bit only)",
                          offset=starts[2], path=path)
    pos += 1  # single whitespace byte after maxval
    need = width * height
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise DecodeError(
            f"truncated PGM raster: expected {need} bytes, found {len(raster)}",
            offset=pos + len(raster), path=path)
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def _encode_pgm(arr):
    h, w = arr.shape
    return b"P5\n%d %d\n255\n" % (w, h) + arr.tobytes()


# ---------------------------------------------------------------------------
# PNG (8-bit grayscale, color type 0, non-interlaced)

def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter_scanlines(raw, width, height, path=None):
    out = np.zeros((height, width), dtype=np.uint8)
    stride = width + 1
    prev = np.zeros(width, dtype=np.int64)
    for r in range(height):
        ftype = raw[r * stride]
        line = np.frombuffer(raw, dtype=np.uint8, count=width,
                             offset=r * stride + 1).astype(np.int64)
        if ftype == 0:
            cur = line
        elif ftype == 1:  # Sub: left-neighbor prediction, bpp = 1
            cur = np.cumsum(line) % 256
        elif ftype == 2:  # Up
            cur = (line + prev) % 256
        elif ftype == 3:  # Average
            cur = np.zeros(width, dtype=np.int64)
            left = 0
            for i in range(width):
                left = (line[i] + (left + prev[i]) // 2) % 256
                cur[i] = left
        elif ftype == 4:  # Paeth
            cur = np.zeros(width, dtype=np.int64)
            left = upleft = 0
            for i in range(width):
                left = (line[i] + _paeth(left, int(prev[i]), upleft)) % 256
                upleft = int(prev[i])
                cur[i] = left
        else:
            raise DecodeError(f"invalid PNG scanline filter {ftype} in row {r}",
                              path=path)
        out[r] = cur.astype(np.uint8)
        prev = cur
    return out


def _decode_png(data, path=None):
    if data[:8] != _PNG_SIG:
        raise DecodeError("bad PNG signature", offset=0, path=path)
    pos = 8
    width = height = None
    idat = bytearray()
    while True:
        if pos + 8 > len(data):
            raise DecodeError("truncated PNG chunk header", offset=pos, path=path)
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        dstart = pos + 8
        dend = dstart + length
        if dend + 4 > len(data):
            raise DecodeError(f"truncated PNG chunk {ctype.decode('latin-1')}",
                              offset=dstart, path=path)
        payload = data[dstart:dend]
        (crc,) = struct.unpack(">I", data[dend:dend + 4])
        if zlib.crc32(data[pos + 4:dend]) & 0xFFFFFFFF != crc:
            raise DecodeError("PNG chunk CRC mismatch", offset=dend, path=path)
        if ctype == b"IHDR":
            width, height, depth, color, comp, filt, interlace = struct.unpack(
                ">IIBBBBB", payload)
            if depth != 8:
                raise DecodeError(f"unsupported PNG bit depth {depth} (need 8)",
                                  offset=dstart + 8, path=path)
            if color != 0:
                raise DecodeError(
                    f"PNG color type {color} not supported (need grayscale, 0)",
                    offset=dstart + 9, path=path)
            if comp != 0 or filt != 0:
                raise DecodeError("unsupported PNG compression/filter method",
                                  offset=dstart + 10, path=path)
            if interlace != 0:
                raise DecodeError("interlaced PNG not supported",
                                  offset=dstart + 12, path=path)
        elif ctype == b"IDAT":
            idat += payload
        elif ctype == b"IEND":
            break
        pos = dend + 4
    if width is None:
        raise DecodeError("PNG missing IHDR", offset=8, path=path)
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise DecodeError(f"PNG IDAT decompression failed: {exc}",
                          path=path) from None
    expected = (width + 1) * height
    if len(raw) != expected:
        raise DecodeError(
            f"PNG pixel data length {len(raw)} != expected {expected}",
            path=path)
    return _unfilter_scanlines(raw, width, height, path=path)


def _png_chunk(ctype, payload):
    crc = zlib.crc32(ctype + payload) & 0xFFFFFFFF
    return struct.pack(">I", len(payload)) + ctype + payload + struct.pack(">I", crc)


def _encode_png(arr):
    h, w = arr.shape
    header = struct.pack(">IIBBBBB", w, h, 8, 0, 0, 0, 0)
    raw = b"".join(b"\x00" + row.tobytes() for row in arr)
    return (_PNG_SIG
            + _png_chunk(b"IHDR", header)
            + _png_chunk(b"IDAT", zlib.compress(raw))
            + _png_chunk(b"IEND", b""))


# ---------------------------------------------------------------------------
# Gray image / mask / probability map I/O

def load_gray(path):
    """Load an 8-bit grayscale PGM or PNG as a uint8 (H, W) array."""
    data = Path(path).read_bytes()
    if data[:8] == _PNG_SIG:
        return _decode_png(data, path=path)
    if data[:2] == b"P5":
        return _decode_pgm(data, path=path)
    raise DecodeError("unrecognized image format (need P5 PGM or PNG)",
                      offset=0, path=path)


def store_gray(image, path):
    """Write a uint8 (H, W) image; PNG when the path ends in .png, else PGM."""
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"image must be 2-D, got shape {arr.shape}")
    arr = arr.astype(np.uint8)
    path = Path(path)
    data = _encode_png(arr) if path.suffix.lower() == ".png" else _encode_pgm(arr)
    path.write_bytes(data)


def load_mask(path):
    """Load a binary mask: intensity > 127 is foreground."""
    return (load_gray(path) > 127).astype(np.uint8)


def store_mask(mask, path):
    """Write a {0,1} mask as 8-bit {0,255}."""
    arr = np.asarray(mask)
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    store_gray(arr.astype(np.uint8) * 255, path)


def load_probmap(path):
    """Load a probability map stored as 8-bit intensities (value/255)."""
    return (load_gray(path).astype(np.float32) / np.float32(255.0)).astype(np.float32)


def store_probmap(probmap, path):
    """Quantize a [0,1] probability map to 8-bit, rounding half up."""
    arr = np.asarray(probmap, dtype=np.float64)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("probability map values must be in [0, 1]")
    store_gray(np.floor(arr * 255.0 + 0.5).astype(np.uint8), path)


# ---------------------------------------------------------------------------
# FST feature-stack container

def store_feature_stack(stack, path):
    """Write a (C, H, W) float32 stack in the FST container (bit-exact)."""
    arr = np.asarray(stack)
    if arr.ndim != 3:
        raise ShapeMismatchError(f"feature stack must be 3-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("feature stack contains non-finite values")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    c, h, w = arr.shape
    Path(path).write_bytes(_FST_MAGIC + f"{c} {h} {w}\n".encode() + arr.tobytes())


def load_feature_stack(path):
    """Read an FST file back into a native float32 (C, H, W) array."""
    data = Path(path).read_bytes()
    if data[:4] != _FST_MAGIC:
        raise DecodeError(f"bad FST magic {data[:4]!r}", offset=0, path=path)
    nl = data.find(b"\n", 4)
    if nl < 0:
        raise DecodeError("FST dims line missing newline", offset=4, path=path)
    try:
        dims = [int(t) for t in data[4:nl].decode("utf-8").split()]
    except (UnicodeDecodeError, ValueError):
        raise DecodeError("unparseable FST dims line", offset=4, path=path) from None
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise DecodeError(f"bad FST dims {dims}", offset=4, path=path)
    c, h, w = dims
    payload = data[nl + 1:]
    expected = c * h * w * 4
    if len(payload) != expected:
        raise DecodeError(
            f"FST payload length mismatch: expected {expected} bytes, "
            f"got {len(payload)}", offset=nl + 1, path=path)
    arr = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    if not np.isfinite(arr).all():
        raise DecodeError("FST payload contains non-finite values", path=path)
    return arr.astype(np.float32)


# ---------------------------------------------------------------------------
# Resizing

def resize(image, size=(256, 256), mode="bilinear"):
    """Resample to ``size`` (height, width).

    ``mode`` is "bilinear" for gray images and probability maps (values
    stay in range) or "nearest" for masks (binarity is preserved). Source
    coordinates use the half-pixel-center convention.
    """
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D image, got shape {arr.shape}")
    h, w = arr.shape
    oh, ow = int(size[0]), int(size[1])
    if h == 0 or w == 0 or oh <= 0 or ow <= 0:
        raise ValueError(f"cannot resize {h}x{w} to {oh}x{ow}")

    if mode == "nearest":
        rows = np.minimum((np.arange(oh) + 0.5) * (h / oh), h - 1).astype(np.int64)
        cols = np.minimum((np.arange(ow) + 0.5) * (w / ow), w - 1).astype(np.int64)
        return arr[rows[:, None], cols[None, :]].copy()
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")

    sy = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    sx = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    fy = (sy - y0)[:, None]
    fx = (sx - x0)[None, :]
    y0 = np.clip(y0.astype(np.int64), 0, h - 1)
    x0 = np.clip(x0.astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    src = arr.astype(np.float64)
    top = src[y0[:, None], x0[None, :]] * (1 - fx) + src[y0[:, None], x1[None, :]] * fx
    bot = src[y1[:, None], x0[None, :]] * (1 - fx) + src[y1[:, None], x1[None, :]] * fx
    out = top * (1 - fy) + bot * fy
    if arr.dtype == np.uint8:
        return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# Dataset manifests

@dataclass(frozen=True)
class ManifestRecord:
    """One dataset entry: image, ground-truth mask, and optional exports."""

    split: str
    image: str = ""
    gtmask: str = ""
    preds: tuple = ()
    fsts: tuple = ()

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        object.__setattr__(self, "preds", tuple(self.preds))
        object.__setattr__(self, "fsts", tuple(self.fsts))


def read_manifest(path):
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) > 5:
            raise ValueError(f"{path}:{lineno}: expected at most 5 fields, "
                             f"got {len(fields)}")
        fields += [""] * (5 - len(fields))
        split, image, gtmask, preds, fsts = fields
        records.append(ManifestRecord(
            split=split, image=image, gtmask=gtmask,
            preds=tuple(p for p in preds.split(",") if p),
            fsts=tuple(f for f in fsts.split(",") if f)))
    return records


def write_manifest(records, path):
    lines = []
    for r in records:
        lines.append("\t".join([r.split, r.image, r.gtmask,
                                ",".join(r.preds), ",".join(r.fsts)]))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def split_manifest(records, ratios=(0.7, 0.2, 0.1), seed=0, counts=None):
    """Assign train/validation/test tags by a seeded shuffle.

    Without ``counts``, test gets floor(ratios[2]*n) records, validation
    floor(ratios[1]*n), and train the remainder. ``counts`` is an explicit
    (train, validation, test) override for reproducing published splits
    whose arithmetic does not follow the floor rule.
    """
    records = list(records)
    n = len(records)
    if n == 0:
        raise ValueError("cannot split an empty record list")
    if counts is None:
        if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
            raise ValueError(f"ratios must sum to 1, got {ratios}")
        test_n = int(ratios[2] * n)
        val_n = int(ratios[1] * n)
        train_n = n - val_n - test_n
    else:
        train_n, val_n, test_n = (int(c) for c in counts)
        if train_n + val_n + test_n != n or min(train_n, val_n, test_n) < 0:
            raise ValueError(
                f"counts {counts} do not partition {n} records")
    order = np.random.default_rng(seed).permutation(n)
    out = [None] * n
    for rank, idx in enumerate(order):
        if rank < train_n:
            tag = "train"
        elif rank < train_n + val_n:
            tag = "validation"
        else:
            tag = "test"
        out[idx] = replace(records[idx], split=tag)
    return out
