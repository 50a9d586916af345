"""Procedural cutout/background libraries for demos and tests.

Two visual styles share the same layout: style ``"A"`` uses saturated solid
shapes on smooth noise, style ``"B"`` uses a disjoint set of shapes with
striped fills on banded backgrounds. B acts as a shifted domain for A.
"""
from __future__ import annotations

import colorsys
import csv
from pathlib import Path

import numpy as np

from . import imaging
from .synth import Library

FAMILIES = {
    "A": ("disk", "star", "square", "triangle", "cross"),
    "B": ("hexagon", "diamond", "crescent", "bar", "heart"),
}

_SUPERSAMPLE = 4


def _polygon_mask(px, py, verts):
    """Even-odd point-in-polygon over coordinate grids."""
    inside = np.zeros(px.shape, dtype=bool)
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        cond = (y1 > py) != (y2 > py)
        xint = (x2 - x1) * (py - y1) / ((y2 - y1) if y2 != y1 else 1e-12) + x1
        inside ^= cond & (px < xint)
    return inside


def _regular(k, r_out, r_in=None, phase=-np.pi / 2):
    pts = []
    steps = 2 * k if r_in is not None else k
    for i in range(steps):
        t = phase + 2 * np.pi * i / steps
        r = r_out if (r_in is None or i % 2 == 0) else r_in
        pts.append((r * np.cos(t), r * np.sin(t)))
    return pts


def shape_mask(family, px, py, rng):
    """Boolean mask of a unit-ish shape over grids in [-1, 1]^2."""
    if family == "disk":
        return px ** 2 + py ** 2 <= 0.9 ** 2
    if family == "star":
        return _polygon_mask(px, py, _regular(5, 0.95, 0.45))
    if family == "square":
        return (np.abs(px) <= 0.8) & (np.abs(py) <= 0.8)
    if family == "triangle":
        return _polygon_mask(px, py, [(0.0, -0.9), (0.9, 0.75), (-0.9, 0.75)])
    if family == "cross":
        return ((np.abs(px) <= 0.3) & (np.abs(py) <= 0.9)) | ((np.abs(py) <= 0.3) & (np.abs(px) <= 0.9))
    if family == "hexagon":
        return _polygon_mask(px, py, _regular(6, 0.92, phase=0.0))
    if family == "diamond":
        return np.abs(px) / 0.7 + np.abs(py) / 0.95 <= 1.0
    if family == "crescent":
        return (px ** 2 + py ** 2 <= 0.9 ** 2) & ((px - 0.4) ** 2 + (py + 0.1) ** 2 > 0.65 ** 2)
    if family == "bar":
        return (np.abs(px) <= 0.92) & (np.abs(py) <= 0.38)
    if family == "heart":
        a = (px + 0.42) ** 2 + (py + 0.3) ** 2 <= 0.45 ** 2
        b = (px - 0.42) ** 2 + (py + 0.3) ** 2 <= 0.45 ** 2
        c = _polygon_mask(px, py, [(-0.85, -0.12), (0.85, -0.12), (0.0, 0.9)])
        return a | b | c
    raise ValueError(f"unknown shape family {family!r}")


def _grid(h, w):
    ss = _SUPERSAMPLE
    ys = (np.arange(h * ss) + 0.5) / (h * ss) * 2 - 1
    xs = (np.arange(w * ss) + 0.5) / (w * ss) * 2 - 1
    return np.meshgrid(xs, ys)


def _downsample(a, h, w):
    ss = _SUPERSAMPLE
    return a.reshape(h, ss, w, ss).mean(axis=(1, 3))


def _hsv(h, s, v):
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v), dtype=np.float32)


def make_cutout(family, rng, style="A", size=96, double=False):
    """RGBA cutout of one shape (two shapes when ``double``) with a dark outline."""
    h = size
    w = int(size * rng.uniform(0.8, 1.0))
    px, py = _grid(h, w)
    if double:
        m = shape_mask(family, px * 2.2 + 1.1, py * 2.2, rng) | shape_mask(family, px * 2.2 - 1.1, py * 2.2, rng)
    else:
        m = shape_mask(family, px, py, rng)
    # outline: mask minus its erosion by a thin band
    shrink = 1.0 / 0.88
    inner = shape_mask(family, px * shrink, py * shrink, rng) if not double else m
    alpha = _downsample(m.astype(np.float32), h, w)
    rim = _downsample((m & ~inner).astype(np.float32), h, w)

    if style == "A":
        base = _hsv(rng.random(), rng.uniform(0.6, 1.0), rng.uniform(0.75, 1.0))
        yy = np.linspace(-1, 1, h)[:, None]
        xx = np.linspace(-1, 1, w)[None, :]
        shade = 1.0 - 0.25 * np.clip(xx * 0.5 + yy * 0.5, -1, 1)
        rgb = base[None, None, :] * shade[..., None]
    else:
        c1 = _hsv(rng.random(), rng.uniform(0.2, 0.5), rng.uniform(0.85, 1.0))
        c2 = _hsv(rng.random(), rng.uniform(0.5, 0.9), rng.uniform(0.4, 0.7))
        period = rng.uniform(6, 12)
        yy, xx = np.mgrid[0:h, 0:w]
        stripe = ((xx + yy) // period % 2).astype(np.float32)[..., None]
        rgb = c1 * stripe + c2 * (1 - stripe)
    rgb = rgb * (1 - rim[..., None]) + 0.05 * rim[..., None]
    img = np.concatenate([np.clip(rgb, 0, 1), alpha[..., None]], axis=2).astype(np.float32)
    rows = np.flatnonzero(alpha.max(axis=1) > 0)
    cols = np.flatnonzero(alpha.max(axis=0) > 0)
    img = img[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    return imaging.as_raster(img)


def make_background(rng, style="A", width=160, height=120, with_object=False):
    if style == "A":
        grid = rng.random((4, 5, 3)).astype(np.float32)
        low = imaging.resize_bilinear(imaging.as_raster(grid), width, height)[..., :3]
        tint = _hsv(rng.random(), 0.3, 0.6)
        rgb = 0.35 + 0.3 * low * tint + 0.04 * rng.standard_normal((height, width, 3))
    else:
        angle = rng.uniform(0, np.pi)
        yy, xx = np.mgrid[0:height, 0:width]
        t = np.cos(angle) * xx + np.sin(angle) * yy
        band = 0.5 + 0.5 * np.sin(t / rng.uniform(8, 20))
        c1 = _hsv(rng.random(), 0.25, 0.55)
        c2 = _hsv(rng.random(), 0.25, 0.35)
        rgb = band[..., None] * c1 + (1 - band[..., None]) * c2
        rgb = rgb + 0.03 * rng.standard_normal((height, width, 3))
    img = imaging.as_raster(np.clip(rgb, 0, 1).astype(np.float32))
    if with_object:
        fam = FAMILIES[style][rng.integers(len(FAMILIES[style]))]
        cut = make_cutout(fam, rng, style, size=int(min(width, height) * 0.6))
        img = imaging.alpha_composite(img, cut, (width // 4, height // 5))
    return img


def build_library(seed, n_cutouts=20, n_backgrounds=40, style="A", n_bad_cutouts=0,
                  n_bad_backgrounds=0, families=None) -> Library:
    """In-memory library; ``bad`` entries get filter scores below 0.95."""
    rng = np.random.default_rng(seed)
    families = families or FAMILIES[style]
    lib = Library()
    for i in range(n_cutouts + n_bad_cutouts):
        fam = families[i % len(families)]
        bad = i >= n_cutouts
        cut = make_cutout(fam, rng, style, double=bad)
        score = rng.uniform(0.2, 0.9) if bad else rng.uniform(0.96, 1.0)
        lib.add_cutout(f"{style}{seed}_{fam}_{i:04d}", cut, score, tag=fam)
    for i in range(n_backgrounds + n_bad_backgrounds):
        bad = i >= n_backgrounds
        bg = make_background(rng, style, with_object=bad)
        score = rng.uniform(0.1, 0.9) if bad else rng.uniform(0.96, 1.0)
        lib.add_background(f"{style}{seed}_bg_{i:04d}", bg, score)
    return lib


def write_library(lib: Library, out_dir) -> Path:
    """Write PNGs and ``library.csv`` (kind,id,path,score,tag); updates ``lib.paths``."""
    out_dir = Path(out_dir)
    (out_dir / "cutouts").mkdir(parents=True, exist_ok=True)
    (out_dir / "backgrounds").mkdir(parents=True, exist_ok=True)
    rows = []
    for cid, img in sorted(lib.cutouts.items()):
        rel = f"cutouts/{cid}.png"
        imaging.save_image(img, out_dir / rel)
        lib.paths[("cutout", cid)] = str(out_dir / rel)
        rows.append(["cutout", cid, rel, f"{lib.cutout_scores[cid]:.6f}", lib.tags.get(cid, "")])
    for bid, img in sorted(lib.backgrounds.items()):
        rel = f"backgrounds/{bid}.png"
        imaging.save_image(img, out_dir / rel)
        lib.paths[("background", bid)] = str(out_dir / rel)
        rows.append(["background", bid, rel, f"{lib.background_scores[bid]:.6f}", ""])
    path = out_dir / "library.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "id", "path", "score", "tag"])
        w.writerows(rows)
    return path
