"""Constructed benchmarks built on top of a composite corpus.

The detection set turns each composite's placements into ground-truth boxes
and fabricates scored candidate windows around them; the retrieval index
gives every composite an embedding clustered by object family, noisy tags,
and optional subitizing scores.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .detect import DetectionWindow, ImageDetections, iou
from .imaging import BoundingBox
from .retrieval import EmbeddingIndex, NumberGroup


def read_provenance(corpus_dir):
    """Accepted records of a corpus directory, in file order."""
    out = []
    with open(Path(corpus_dir) / "provenance.jsonl") as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("accepted", True):
                out.append(rec)
    return out


def record_id(rec):
    return Path(rec["image"]).stem


def ground_truth_boxes(rec, canvas_size):
    """Canvas-clipped boxes of every pasted instance."""
    boxes = []
    for p in rec.get("placements", []):
        x0, y0 = max(p["x"], 0), max(p["y"], 0)
        x1, y1 = min(p["x"] + p["w"], canvas_size), min(p["y"] + p["h"], canvas_size)
        boxes.append(BoundingBox(x0, y0, max(1, x1 - x0), max(1, y1 - y0)))
    return boxes


@dataclass(frozen=True)
class DetectionNoise:
    hit_mean: float = 0.6        # window on an object
    duplicate_mean: float = 0.45  # second, looser window on the same object
    clutter_mean: float = 0.35   # window on background clutter
    score_sd: float = 0.1
    image_offset: float = 0.25   # per-image shift, U(-a, a), shared by all windows
    clutter_range: tuple = (2, 5)
    box_jitter: float = 0.08


def _jitter_box(rng, b: BoundingBox, amount, size):
    dx, dy, dw, dh = rng.uniform(-amount, amount, 4)
    w = max(2.0, b.w * (1 + dw))
    h = max(2.0, b.h * (1 + dh))
    x = float(np.clip(b.x + dx * b.w, 0, size - w))
    y = float(np.clip(b.y + dy * b.h, 0, size - h))
    return BoundingBox(x, y, w, h)


def _clutter_box(rng, gts, size, tries=50):
    for _ in range(tries):
        w, h = rng.uniform(0.1, 0.5, 2) * size
        x, y = rng.uniform(0, size - w), rng.uniform(0, size - h)
        b = BoundingBox(float(x), float(y), float(w), float(h))
        if all(iou(b, g) < 0.3 for g in gts):
            return b
    return b


def make_detection_set(records, canvas_size, seed, noise: DetectionNoise = DetectionNoise()):
    """Scored candidate windows for every record. The per-image score offset
    stands in for the image-dependent calibration of a real proposal scorer,
    which is what makes a single global threshold a poor operating point."""
    out = []
    for rec in records:
        rng = np.random.default_rng([seed, rec["label"], rec["index"]])
        gts = ground_truth_boxes(rec, canvas_size)
        off = rng.uniform(-noise.image_offset, noise.image_offset)
        cands = []
        for g in gts:
            cands.append(DetectionWindow(_jitter_box(rng, g, noise.box_jitter, canvas_size),
                                         float(rng.normal(noise.hit_mean, noise.score_sd) + off)))
            if rng.random() < 0.5:
                cands.append(DetectionWindow(_jitter_box(rng, g, 3 * noise.box_jitter, canvas_size),
                                             float(rng.normal(noise.duplicate_mean, noise.score_sd) + off)))
        for _ in range(int(rng.integers(noise.clutter_range[0], noise.clutter_range[1] + 1))):
            cands.append(DetectionWindow(_clutter_box(rng, gts, canvas_size),
                                         float(rng.normal(noise.clutter_mean, noise.score_sd) + off)))
        order = rng.permutation(len(cands))
        out.append(ImageDetections(record_id(rec), [cands[i] for i in order], gts))
    return out


def record_family(rec, tags):
    cid = rec.get("recipe", {}).get("cutout_id")
    return tags.get(cid) if cid is not None else None


def make_retrieval_index(records, tags, seed, dim=16, spread=3.0, object_tag_rate=0.8,
                         number_tag_rate=0.3, number_tag_accuracy=0.5, sos=None):
    """Embedding index over composites.

    Vectors are a per-family centroid plus unit Gaussian noise (backgrounds get
    their own centroid). Each item carries its family tag with probability
    ``object_tag_rate`` and a number word with probability ``number_tag_rate``,
    correct with probability ``number_tag_accuracy``. Returns (index, judgments,
    object tags) where a query '<group> <family>' judges an item relevant iff
    it shows that family with the matching count.
    """
    rng = np.random.default_rng(seed)
    fams = sorted({record_family(r, tags) for r in records} - {None})
    centroids = {f: rng.normal(size=dim) for f in fams + [None]}
    for f in centroids:
        centroids[f] *= spread / np.linalg.norm(centroids[f])
    groups = list(NumberGroup)
    ids, vecs, item_tags, truth = [], [], [], []
    for rec in records:
        fam = record_family(rec, tags)
        n = int(rec["label"])
        ids.append(record_id(rec))
        vecs.append(centroids[fam] + rng.normal(size=dim))
        t = set()
        if fam is not None and rng.random() < object_tag_rate:
            t.add(fam)
        if n > 0 and rng.random() < number_tag_rate:
            true_group = groups[min(n, 4) - 1]
            t.add(true_group.value if rng.random() < number_tag_accuracy
                  else groups[int(rng.integers(len(groups)))].value)
        item_tags.append(t)
        truth.append((fam, min(n, 4)))
    index = EmbeddingIndex(ids, np.array(vecs), item_tags, sos)
    judgments = {}
    for fam in fams:
        for g in groups:
            q = f"{g.value} {fam}"
            for item, (f, n) in zip(ids, truth):
                judgments[(q, item)] = int(f == fam and n == int(g.count_label))
    return index, judgments, fams
