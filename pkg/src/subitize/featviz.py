"""Find feature channels whose image rankings differ from every channel of a reference model,
and cut the image patches that excite them most."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imaging

log = logging.getLogger(__name__)


def average_ranks(values):
    """1-based ranks; tied values share the mean of the ranks they span."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    sv = v[order]
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and sv[j + 1] == sv[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(a, b):
    """Pearson correlation of the average ranks of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("spearman_rho needs two 1-D sequences of equal length")
    if len(a) < 2:
        raise ValueError("spearman_rho needs at least 2 items")
    ra = average_ranks(a) - (len(a) + 1) / 2.0
    rb = average_ranks(b) - (len(b) + 1) / 2.0
    den = np.sqrt((ra @ ra) * (rb @ rb))
    if den == 0:
        raise ValueError("zero rank variance")
    return float(np.clip((ra @ rb) / den, -1.0, 1.0))


@dataclass
class ChannelRanking:
    channel_id: int
    activations: np.ndarray   # per-image max activation
    image_ids: tuple = ()

    @property
    def ranking(self):
        """Image indices by descending activation (ties in input order)."""
        return np.argsort(-self.activations, kind="stable")


@dataclass
class NoveltyScore:
    channel_id: int
    score: float
    best_reference: int


def channel_rankings(feature_maps, image_ids=None):
    """Per-channel max activation over space for a stack of maps (N, h, w, C)."""
    fm = np.asarray(feature_maps)
    peaks = fm.reshape(fm.shape[0], -1, fm.shape[-1]).max(axis=1)
    ids = tuple(image_ids) if image_ids is not None else tuple(range(fm.shape[0]))
    return [ChannelRanking(c, peaks[:, c].astype(np.float64), ids) for c in range(fm.shape[-1])]


def _standardized_ranks(channels):
    R = np.stack([average_ranks(ch.activations) for ch in channels], axis=1)
    R -= R.mean(axis=0)
    norm = np.sqrt((R * R).sum(axis=0))
    ok = norm > 0
    R[:, ok] /= norm[ok]
    return R, ok


def novelty_scores(model_channels, reference_channels):
    """For each model channel, the highest Spearman rho against any reference channel.

    Channels with constant activations have no ranking; a model channel of
    that kind gets ``nan`` and constant reference channels are ignored.
    """
    if not model_channels or not reference_channels:
        raise ValueError("both channel lists must be non-empty")
    ids = model_channels[0].image_ids
    for ch in list(model_channels) + list(reference_channels):
        if ch.image_ids != ids or len(ch.activations) != len(model_channels[0].activations):
            raise ValueError("model and reference channels must rank the same image set")
    M, mok = _standardized_ranks(model_channels)
    Rf, rok = _standardized_ranks(reference_channels)
    if not rok.any():
        raise ValueError("every reference channel is constant")
    corr = np.clip(M.T @ Rf[:, rok], -1.0, 1.0)
    ref_index = np.flatnonzero(rok)
    out = []
    for i, ch in enumerate(model_channels):
        if not mok[i]:
            warnings.warn(f"channel {ch.channel_id} is constant over the image set; score undefined")
            out.append(NoveltyScore(ch.channel_id, float("nan"), -1))
            continue
        j = int(np.argmax(corr[i]))
        out.append(NoveltyScore(ch.channel_id, float(corr[i, j]),
                                reference_channels[ref_index[j]].channel_id))
    return out


def select_novel(scores, threshold=0.3):
    """Channel ids with score strictly below ``threshold``, lowest score first."""
    keep = [s for s in scores if np.isfinite(s.score) and s.score < threshold]
    keep.sort(key=lambda s: (s.score, s.channel_id))
    return [s.channel_id for s in keep]


def score_histogram(scores, bins=20):
    vals = np.array([s.score for s in scores if np.isfinite(s.score)])
    return np.histogram(vals, bins=bins, range=(-1.0, 1.0))


def patch_box(peak_rc, map_hw, image_wh, patch_fraction=0.6):
    """Pixel box (x, y, w, h) centred on a feature-map cell, clamped inside the image."""
    (r, c), (fh, fw), (W, H) = peak_rc, map_hw, image_wh
    pw = max(1, min(W, int(round(patch_fraction * W))))
    ph = max(1, min(H, int(round(patch_fraction * H))))
    cx = (c + 0.5) / fw * W
    cy = (r + 0.5) / fh * H
    x = int(np.clip(round(cx - pw / 2.0), 0, W - pw))
    y = int(np.clip(round(cy - ph / 2.0), 0, H - ph))
    return x, y, pw, ph


def top_patches(channel, feature_maps, images, k=9, patch_fraction=0.6):
    """Patches from the ``k`` images where ``channel`` peaks highest.

    Returns a list of (image index, patch, box). Fewer than ``k`` images
    yields all of them with a warning.
    """
    fm = np.asarray(feature_maps)
    n = fm.shape[0]
    if n < k:
        warnings.warn(f"only {n} images available for top-{k} patches")
        k = n
    chan = fm[..., channel]
    flat = chan.reshape(n, -1)
    peaks = flat.max(axis=1)
    order = np.argsort(-peaks, kind="stable")[:k]
    out = []
    for i in order:
        r, c = np.unravel_index(int(np.argmax(flat[i])), chan.shape[1:])
        img = images[i]
        H, W = img.shape[:2]
        box = patch_box((r, c), chan.shape[1:], (W, H), patch_fraction)
        x, y, w, h = box
        out.append((int(i), np.ascontiguousarray(img[y:y + h, x:x + w]), box))
    return out


def montage(patches, cell=96, grid=3):
    """Square grid of patches resized to ``cell`` pixels; empty cells stay black."""
    canvas = np.zeros((grid * cell, grid * cell, 4), dtype=np.float32)
    canvas[..., 3] = 1.0
    for n, p in enumerate(patches[: grid * grid]):
        tile = imaging.resize_bilinear(imaging.as_raster(p), cell, cell)
        r, c = divmod(n, grid)
        canvas[r * cell:(r + 1) * cell, c * cell:(c + 1) * cell] = tile
    return canvas


def write_scores(scores, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "score", "best_reference"])
        for s in scores:
            w.writerow([s.channel_id, "" if not np.isfinite(s.score) else f"{s.score:.6f}", s.best_reference])
    return Path(path)


def write_histogram(counts, edges, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow([f"{lo:.2f}", f"{hi:.2f}", int(c)])
    return Path(path)
