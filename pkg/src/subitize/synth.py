"""Synthetic subitizing scenes: N transformed copies of one cutout pasted on a background.

Every random draw is derived from a ``SeedSequence`` built from explicit
integers, so an image depends only on (library, config, recipe) and corpus
images do not depend on generation order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import imaging
from .data import CountLabel, DatasetManifest, ManifestEntry, ManifestError, write_manifest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthConfig:
    canvas_size: int = 256
    ref_scale_range: tuple = (0.4, 0.8)
    jitter_scale_range: tuple = (0.85, 1.15)
    rotation_range_deg: tuple = (-10.0, 10.0)
    hflip_prob: float = 0.5
    max_occlusion: float = 0.5
    max_attempts: int = 100
    max_recipes: int = 50
    count_range: tuple = (1, 4)

    def __post_init__(self):
        for name in ("ref_scale_range", "jitter_scale_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi <= 1.5:
                raise ValueError(f"{name} must satisfy 0 < lo <= hi <= 1.5")
        lo, hi = self.rotation_range_deg
        if not -180 <= lo <= hi <= 180:
            raise ValueError("rotation_range_deg must lie in [-180, 180]")
        if not 0 <= self.max_occlusion < 1:
            raise ValueError("max_occlusion must lie in [0, 1)")
        if self.max_attempts < 1 or self.max_recipes < 1:
            raise ValueError("max_attempts and max_recipes must be >= 1")
        if not 1 <= self.count_range[0] <= self.count_range[1]:
            raise ValueError("count_range must be 1 <= lo <= hi")
        if self.canvas_size < 8:
            raise ValueError("canvas_size too small")
        if not 0 <= self.hflip_prob <= 1:
            raise ValueError("hflip_prob must lie in [0, 1]")

    @property
    def min_visible(self):
        return 1.0 - self.max_occlusion


@dataclass(frozen=True)
class SynthRecipe:
    seed: int
    n_objects: int
    cutout_id: str
    background_id: str
    attempt: int = 0


@dataclass
class Placement:
    x: int  # top-left of the transformed instance on the canvas
    y: int
    w: int
    h: int
    center_x: float
    center_y: float
    scale: float  # jitter relative to the reference object
    rotation: float
    hflip: bool
    visible_fraction: float = 0.0
    visible_fraction_binary: float = 0.0


@dataclass
class PlacementLog:
    recipe: SynthRecipe
    ref_scale: float
    ref_factor: float  # resize factor from the source cutout to the reference object
    placements: list = field(default_factory=list)

    def to_json(self):
        d = asdict(self)
        d["recipe"] = asdict(self.recipe)
        return d


@dataclass
class Rejected:
    log: PlacementLog
    reason: str


@dataclass
class Library:
    """Cutouts (RGBA with alpha support) and backgrounds, each with a filter score."""
    cutouts: dict = field(default_factory=dict)       # id -> raster
    backgrounds: dict = field(default_factory=dict)   # id -> raster
    cutout_scores: dict = field(default_factory=dict)
    background_scores: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)         # (kind, id) -> source path
    tags: dict = field(default_factory=dict)          # cutout id -> object tag
    warnings: list = field(default_factory=list)
    _resized: dict = field(default_factory=dict, repr=False, compare=False)

    def __len__(self):
        return len(self.cutouts) + len(self.backgrounds)

    def add_cutout(self, cid, img, score=1.0, path=None, tag=None):
        img = imaging.as_raster(img)
        if not (img[..., 3] > 0.5).any():
            raise ValueError(f"cutout {cid!r} has no alpha support")
        _check_score(score)
        self.cutouts[cid] = img
        self.cutout_scores[cid] = float(score)
        if path is not None:
            self.paths[("cutout", cid)] = str(path)
        if tag is not None:
            self.tags[cid] = tag

    def add_background(self, bid, img, score=1.0, path=None):
        _check_score(score)
        self.backgrounds[bid] = imaging.as_raster(img)
        self.background_scores[bid] = float(score)
        if path is not None:
            self.paths[("background", bid)] = str(path)


def _check_score(score):
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score {score} outside [0, 1]")


def load_library(path) -> Library:
    """Read a library CSV ``kind,id,path,score[,tag]``; relative paths resolve against its directory.
    A directory stands for the ``library.csv`` inside it."""
    path = Path(path)
    if path.is_dir():
        path = path / "library.csv"
    lib = Library()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"kind", "id", "path", "score"} <= set(reader.fieldnames):
            raise ManifestError(f"{path}: header must be kind,id,path,score")
        for row in reader:
            p = Path(row["path"])
            if not p.is_absolute():
                p = path.parent / p
            img = imaging.load_image(p)
            score = float(row["score"])
            if row["kind"] == "cutout":
                lib.add_cutout(row["id"], img, score, path=p, tag=row.get("tag") or None)
            elif row["kind"] == "background":
                lib.add_background(row["id"], img, score, path=p)
            else:
                raise ManifestError(f"{path}: unknown kind {row['kind']!r}")
    return lib


def filter_library(lib: Library, threshold=0.95) -> Library:
    """Keep cutouts/backgrounds whose single-object / no-object score is >= threshold."""
    out = Library(paths=dict(lib.paths), tags=dict(lib.tags), warnings=list(lib.warnings))
    for cid, img in lib.cutouts.items():
        if lib.cutout_scores[cid] >= threshold:
            out.cutouts[cid] = img
            out.cutout_scores[cid] = lib.cutout_scores[cid]
    for bid, img in lib.backgrounds.items():
        if lib.background_scores[bid] >= threshold:
            out.backgrounds[bid] = img
            out.background_scores[bid] = lib.background_scores[bid]
    for kind, kept in (("cutouts", out.cutouts), ("backgrounds", out.backgrounds)):
        if not kept:
            msg = f"filter at {threshold} removed all {kind}"
            out.warnings.append(msg)
            log.warning(msg)
    return out


# ------------------------------------------------------------ generation

def _rng(*keys):
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]))


def _canvas_alpha(alpha, at, size):
    """Instance alpha on the canvas grid, clipped; zeros where the instance is absent."""
    plane = np.zeros((size, size), dtype=np.float32)
    win = imaging.paste_window((size, size), alpha.shape, at)
    if win is not None:
        (cs, cx), (ks, kx) = win
        plane[cs, cx] = alpha[ks, kx]
    return plane


def visible_fractions(alphas, positions, size):
    """Soft (alpha-weighted) and binary (alpha > 0.5) visible fraction per instance, paint order."""
    n = len(alphas)
    soft = np.zeros(n)
    binary = np.zeros(n)
    cover = np.ones((size, size), dtype=np.float64)       # prod of (1 - alpha) over later instances
    occupied = np.zeros((size, size), dtype=bool)          # union of later binary masks
    for k in range(n - 1, -1, -1):
        a = alphas[k]
        plane = _canvas_alpha(a, positions[k], size).astype(np.float64)
        total = float(a.astype(np.float64).sum())
        soft[k] = float((plane * cover).sum()) / total if total > 0 else 0.0
        mask = plane > 0.5
        nbin = int((a > 0.5).sum())
        binary[k] = float((mask & ~occupied).sum()) / nbin if nbin else 0.0
        cover *= 1.0 - plane
        occupied |= mask
    return soft, binary


def _background(lib, bid, size):
    key = (bid, size)
    cached = lib._resized.get(key)
    if cached is None:
        cached = imaging.resize_bilinear(lib.backgrounds[bid], size, size)
        cached[..., 3] = 1.0
        lib._resized[key] = cached
    return cached


def reference_factor(cutout_shape, canvas_size, ref_scale):
    return ref_scale * canvas_size / max(cutout_shape[0], cutout_shape[1])


def generate_image(lib: Library, cfg: SynthConfig, recipe: SynthRecipe):
    """Render one composite. Returns (image, label, PlacementLog) or a ``Rejected`` value."""
    if recipe.cutout_id not in lib.cutouts:
        raise KeyError(f"unknown cutout {recipe.cutout_id!r}")
    if recipe.background_id not in lib.backgrounds:
        raise KeyError(f"unknown background {recipe.background_id!r}")
    lo, hi = cfg.count_range
    if not lo <= recipe.n_objects <= hi:
        raise ValueError(f"n_objects {recipe.n_objects} outside {cfg.count_range}")
    size = cfg.canvas_size
    cut = lib.cutouts[recipe.cutout_id]
    ref_scale = float(_rng(recipe.seed).uniform(*cfg.ref_scale_range))
    factor = reference_factor(cut.shape, size, ref_scale)
    plog = PlacementLog(recipe, ref_scale, factor)

    rng = _rng(recipe.seed, recipe.attempt + 1)
    instances, positions = [], []
    for _ in range(recipe.n_objects):
        flip = bool(rng.random() < cfg.hflip_prob)
        jitter = float(rng.uniform(*cfg.jitter_scale_range))
        rot = float(rng.uniform(*cfg.rotation_range_deg))
        cx, cy = rng.uniform(0.0, size, 2)
        inst = imaging.transform_cutout(cut, factor * jitter, rot, flip)
        h, w = inst.shape[:2]
        x, y = int(np.floor(cx - w / 2.0)), int(np.floor(cy - h / 2.0))
        instances.append(inst)
        positions.append((x, y))
        plog.placements.append(Placement(x, y, w, h, float(cx), float(cy), jitter, rot, flip))

    soft, binary = visible_fractions([i[..., 3] for i in instances], positions, size)
    for p, s, b in zip(plog.placements, soft, binary):
        p.visible_fraction = float(s)
        p.visible_fraction_binary = float(b)
    worst = float(min(soft.min(), binary.min()))
    if worst < cfg.min_visible:
        return Rejected(plog, f"instance visible fraction {worst:.3f} < {cfg.min_visible:.3f}")

    canvas = _background(lib, recipe.background_id, size).copy()
    for inst, at in zip(instances, positions):
        canvas = imaging.alpha_composite(canvas, inst, at)
    return canvas, CountLabel.from_count(recipe.n_objects), plog


def sample_recipe(lib, cfg, n_objects, seed, attempt=0):
    rng = _rng(seed, 0xC0FFEE)
    cids = sorted(lib.cutouts)
    bids = sorted(lib.backgrounds)
    return SynthRecipe(int(seed), n_objects, cids[rng.integers(len(cids))],
                       bids[rng.integers(len(bids))], attempt)


def image_seed(base_seed, label, index, recipe_no=0):
    """Per-image seed from (base seed, class, index, recipe number); order independent."""
    return int(_rng(base_seed, label, index, recipe_no).integers(0, 2**63 - 1))


def render_one(lib, cfg, n_objects, base_seed, index):
    """Rejection-sample one accepted composite for class ``n_objects``.

    Each recipe (cutout, background, reference scale) gets ``max_attempts``
    placement draws before a fresh recipe is drawn. Returns
    (result or None, attempts_used).
    """
    attempts = 0
    for r in range(cfg.max_recipes):
        seed = image_seed(base_seed, n_objects, index, r)
        base = sample_recipe(lib, cfg, n_objects, seed)
        for a in range(cfg.max_attempts):
            recipe = SynthRecipe(base.seed, n_objects, base.cutout_id, base.background_id, a)
            out = generate_image(lib, cfg, recipe)
            attempts += 1
            if not isinstance(out, Rejected):
                return out, attempts
    return None, attempts


@dataclass
class CorpusResult:
    manifest: DatasetManifest
    provenance: list
    shortfall: dict

    @property
    def complete(self):
        return not any(self.shortfall.values())


def generate_corpus(lib, cfg, per_class_count, base_seed, include_backgrounds=True, out_dir=None):
    """Emit ``per_class_count`` accepted composites per count in ``count_range``.

    With ``out_dir`` the composites are written as PNG under ``out_dir/images``
    together with ``manifest.csv`` and ``provenance.jsonl``. Zero-class
    entries reference distinct, unmodified backgrounds.
    """
    if per_class_count < 1:
        raise ValueError("per_class_count must be >= 1")
    if not lib.cutouts or not lib.backgrounds:
        raise ValueError("library needs at least one cutout and one background")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)

    entries, prov, shortfall = [], [], {}
    if include_backgrounds:
        bids = sorted(lib.backgrounds)
        order = _rng(base_seed, 0).permutation(len(bids))[:per_class_count]
        for i, k in enumerate(order):
            bid = bids[k]
            path = lib.paths.get(("background", bid))
            if path is None:
                if out_dir is None:
                    path = f"background:{bid}"
                else:
                    path = str(imaging.save_image(lib.backgrounds[bid], out_dir / "images" / f"bg_{bid}.png"))
            entries.append(ManifestEntry(str(path), CountLabel.ZERO))
            prov.append({"image": str(path), "label": 0, "background_id": bid, "index": i})
        shortfall[0] = per_class_count - len(order)

    lo, hi = cfg.count_range
    for n in range(lo, hi + 1):
        made = 0
        for i in range(per_class_count):
            res, attempts = render_one(lib, cfg, n, base_seed, i)
            if res is None:
                prov.append({"label": n, "index": i, "accepted": False, "attempts": attempts})
                continue
            img, label, plog = res
            name = f"n{n}_{i:06d}.png"
            path = str(out_dir / "images" / name) if out_dir is not None else f"memory:{name}"
            if out_dir is not None:
                imaging.save_image(img, path)
            entries.append(ManifestEntry(path, label))
            rec = plog.to_json()
            rec.update({"image": f"images/{name}", "label": int(label), "index": i, "accepted": True,
                        "attempts": attempts, "rejected": attempts - 1,
                        "clipping_counts_as_occlusion": True})
            prov.append(rec)
            made += 1
        shortfall[n] = per_class_count - made
        if shortfall[n]:
            log.warning("class %d: %d images short of %d", n, shortfall[n], per_class_count)

    manifest = DatasetManifest(entries)
    if out_dir is not None:
        write_manifest(manifest, out_dir / "manifest.csv", relative_to=out_dir)
        with open(out_dir / "provenance.jsonl", "w") as fh:
            for rec in prov:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        (out_dir / "shortfall.json").write_text(json.dumps({str(k): v for k, v in shortfall.items()}) + "\n")
    return CorpusResult(manifest, prov, shortfall)


def corpus_digest(out_dir):
    """SHA-256 over manifest, provenance, and every image file, in manifest order."""
    out_dir = Path(out_dir)
    h = hashlib.sha256()
    for name in ("manifest.csv", "provenance.jsonl"):
        h.update((out_dir / name).read_bytes())
    for p in sorted((out_dir / "images").glob("*.png")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()
