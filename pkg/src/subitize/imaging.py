"""Raster primitives: codec, bilinear resize, flip/crop, cutout transform, compositing.

A raster is a float32 array of shape (height, width, 4) holding RGBA
intensities in [0, 1]; alpha 1 is fully opaque.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import kernels

SOSF_MAGIC = b"SOSF"
_PIL_LOAD = {".png", ".jpg", ".jpeg", ".bmp"}


class ImageDecodeError(Exception):
    """File exists but could not be decoded into a complete image."""


class UnsupportedFormatError(Exception):
    """File extension is not a supported raster format."""


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"box sides must be >= 1, got {self.w}x{self.h}")

    @property
    def area(self):
        return self.w * self.h


def as_raster(arr) -> np.ndarray:
    """Validate and normalise to float32 HxWx4; RGB and gray inputs gain alpha=1."""
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim == 2:
        a = np.repeat(a[..., None], 3, axis=2)
    if a.ndim != 3 or a.shape[2] not in (3, 4):
        raise ValueError(f"expected HxWx3 or HxWx4 raster, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError("raster must be at least 1x1")
    if a.shape[2] == 3:
        a = np.concatenate([a, np.ones(a.shape[:2] + (1,), np.float32)], axis=2)
    return np.ascontiguousarray(np.clip(a, 0.0, 1.0))


# ---------------------------------------------------------------- codec

def load_image(path) -> np.ndarray:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".sosf":
        return _load_sosf(path)
    if ext not in _PIL_LOAD:
        raise UnsupportedFormatError(f"{path}: unsupported format {ext!r}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("RGB", "RGBA"):
                im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError:
        raise
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        raise ImageDecodeError(f"{path}: {exc}") from exc
    return as_raster(arr.astype(np.float32) / 255.0)


def save_image(img, path) -> Path:
    """Write PNG (8-bit RGBA) or SOSF (exact float32) according to the extension."""
    path = Path(path)
    img = as_raster(img)
    ext = path.suffix.lower()
    if ext == ".sosf":
        h, w, c = img.shape
        with open(path, "wb") as fh:
            fh.write(SOSF_MAGIC + struct.pack("<III", w, h, c))
            fh.write(img.astype("<f4").tobytes())
        return path
    if ext != ".png":
        raise UnsupportedFormatError(f"{path}: cannot save {ext!r}")
    q = np.round(img * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGBA").save(path, optimize=False, compress_level=1)
    return path


def _load_sosf(path):
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != SOSF_MAGIC:
        raise ImageDecodeError(f"{path}: bad SOSF header")
    w, h, c = struct.unpack("<III", data[4:16])
    need = 16 + 4 * w * h * c
    if c not in (3, 4) or w < 1 or h < 1 or len(data) != need:
        raise ImageDecodeError(f"{path}: SOSF payload size mismatch")
    arr = np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w, c)
    if c == 4:
        return np.ascontiguousarray(arr, dtype=np.float32)
    return as_raster(arr)


# ------------------------------------------------------------ geometry

def resize_bilinear(img, out_w, out_h) -> np.ndarray:
    """Half-pixel-centred bilinear resize with edge replication; all channels interpolated."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be >= 1, got {out_w}x{out_h}")
    img = np.asarray(img, dtype=np.float32)
    h, w = img.shape[:2]
    sx, sy = w / out_w, h / out_h
    mat = np.array([[sx, 0.0, 0.5 * sx - 0.5], [0.0, sy, 0.5 * sy - 0.5]])
    return kernels.affine_sample(img, mat, out_h, out_w, clamp=True)


def hflip(img) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(img)[:, ::-1])


def crop(img, x, y, w, h) -> np.ndarray:
    H, W = img.shape[:2]
    if x < 0 or y < 0 or x + w > W or y + h > H or w < 1 or h < 1:
        raise ValueError(f"crop ({x},{y},{w},{h}) outside {W}x{H}")
    return np.ascontiguousarray(img[y:y + h, x:x + w])


def transformed_size(w, h, scale, rotation_deg):
    """Tight integer canvas for a w x h raster after scaling then rotating."""
    t = math.radians(rotation_deg)
    c, s = abs(math.cos(t)), abs(math.sin(t))
    ow = w * scale * c + h * scale * s
    oh = w * scale * s + h * scale * c
    return max(1, math.ceil(ow - 1e-6)), max(1, math.ceil(oh - 1e-6))


def transform_cutout(img, scale, rotation_deg=0.0, flip=False) -> np.ndarray:
    """Flip, then scale, then rotate about the centre (positive = counter-clockwise on screen).

    Resampling pulls through the inverse map with bilinear taps; taps falling
    outside the source read as transparent black.
    """
    if scale <= 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    if abs(rotation_deg) > 180:
        raise ValueError(f"rotation must lie in [-180, 180], got {rotation_deg}")
    img = as_raster(img)
    if flip:
        img = hflip(img)
    h, w = img.shape[:2]
    ow, oh = transformed_size(w, h, scale, rotation_deg)
    t = math.radians(rotation_deg)
    # screen y points down, so a counter-clockwise turn uses -t in image coordinates
    c, s = math.cos(-t), math.sin(-t)
    dx0, dy0 = 0.5 - ow / 2.0, 0.5 - oh / 2.0
    mat = np.array([
        [c / scale, s / scale, (c * dx0 + s * dy0) / scale + w / 2.0 - 0.5],
        [-s / scale, c / scale, (-s * dx0 + c * dy0) / scale + h / 2.0 - 0.5],
    ])
    return kernels.affine_sample(img, mat, oh, ow, clamp=False)


# ----------------------------------------------------------- compositing

def paste_window(canvas_shape, cut_shape, at):
    """Overlap of a cutout placed with its top-left at ``at``: (canvas slices, cutout slices) or None."""
    H, W = canvas_shape[:2]
    h, w = cut_shape[:2]
    x, y = int(at[0]), int(at[1])
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, W), min(y + h, H)
    if x0 >= x1 or y0 >= y1:
        return None
    return ((slice(y0, y1), slice(x0, x1)),
            (slice(y0 - y, y1 - y), slice(x0 - x, x1 - x)))


def alpha_composite(canvas, cutout, at) -> np.ndarray:
    """Paint ``cutout`` over an opaque ``canvas`` with the over operator; returns a new canvas.

    Pixels of the cutout that fall outside the canvas are dropped.
    """
    out = np.array(canvas, dtype=np.float32, copy=True)
    win = paste_window(out.shape, cutout.shape, at)
    if win is None:
        return out
    (cs, cx), (ks, kx) = win
    src = cutout[ks, kx]
    a = src[..., 3:4]
    dst = out[cs, cx]
    dst[..., :3] = a * src[..., :3] + (1.0 - a) * dst[..., :3]
    dst[..., 3:4] = a + (1.0 - a) * dst[..., 3:4]
    out[cs, cx] = dst
    return out
