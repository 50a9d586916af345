"""Count-cued detection post-processing and pooled precision / recall / F-measure."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import BoundingBox


@dataclass(frozen=True)
class DetectionWindow:
    box: BoundingBox
    score: float

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")


@dataclass
class ImageDetections:
    image_id: str
    candidates: list = field(default_factory=list)
    ground_truth: list = field(default_factory=list)


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    f_measure: float
    tp: int
    n_detections: int
    n_ground_truth: int


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def by_score(windows):
    """Descending score; equal scores keep input order."""
    return sorted(windows, key=lambda d: -d.score)


def cue_by_count(candidates, n):
    """Keep the ``n`` best-scoring windows (all of them if fewer); n = 0 keeps none."""
    if n < 0:
        raise ValueError("count must be >= 0")
    return by_score(candidates)[:n]


def threshold_windows(candidates, t):
    return [d for d in candidates if d.score >= t]


def greedy_match(detections, ground_truth, iou_threshold=0.5):
    """True positives under greedy matching: each detection, best first, claims the
    unmatched ground-truth box it overlaps most, provided IoU >= threshold."""
    taken = [False] * len(ground_truth)
    tp = 0
    for d in by_score(detections):
        best, best_j = -1.0, -1
        for j, g in enumerate(ground_truth):
            if taken[j]:
                continue
            o = iou(d.box, g)
            # equal overlaps go to the earlier ground-truth box
            if o >= iou_threshold and o > best:
                best, best_j = o, j
        if best_j >= 0:
            taken[best_j] = True
            tp += 1
    return tp


def f_measure(precision, recall):
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


def pooled_scores(tp, n_det, n_gt):
    """Pooled P/R/F. No detections gives P = 1; no ground truth gives R = 1."""
    p = tp / n_det if n_det else 1.0
    r = tp / n_gt if n_gt else 1.0
    return p, r, f_measure(p, r)


def match_and_score(selected, iou_threshold=0.5, threshold=float("nan")) -> PRPoint:
    """Score per-image selections pooled over the whole set.

    ``selected`` is an iterable of ImageDetections whose ``candidates`` are the
    windows actually output for that image.
    """
    tp = n_det = n_gt = 0
    for im in selected:
        tp += greedy_match(im.candidates, im.ground_truth, iou_threshold)
        n_det += len(im.candidates)
        n_gt += len(im.ground_truth)
    p, r, f = pooled_scores(tp, n_det, n_gt)
    return PRPoint(threshold, p, r, f, tp, n_det, n_gt)


def cue_all(images, counts):
    """Apply cue_by_count per image with ``counts[image_id]``."""
    return [ImageDetections(im.image_id, cue_by_count(im.candidates, int(counts[im.image_id])),
                            im.ground_truth) for im in images]


def sweep_threshold(images, thresholds, iou_threshold=0.5):
    """Fixed-threshold PR curve and the F-maximising point (first one on ties)."""
    ts = list(thresholds)
    if any(b < a for a, b in zip(ts, ts[1:])):
        raise ValueError("thresholds must be sorted ascending")
    curve = []
    for t in ts:
        sel = [ImageDetections(im.image_id, threshold_windows(im.candidates, t), im.ground_truth)
               for im in images]
        curve.append(match_and_score(sel, iou_threshold, t))
    best = max(curve, key=lambda p: p.f_measure) if curve else None
    return curve, best


def candidate_thresholds(images):
    """Every distinct candidate score plus one value above the maximum."""
    s = sorted({d.score for im in images for d in im.candidates})
    return s + [(s[-1] + 1.0) if s else 1.0]


# ------------------------------------------------------------------ I/O

def read_detections(path):
    out = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                cands = [DetectionWindow(BoundingBox(*c[:4]), float(c[4])) for c in rec["candidates"]]
                gts = [BoundingBox(*g[:4]) for g in rec.get("ground_truth", [])]
                out.append(ImageDetections(str(rec["image_id"]), cands, gts))
            except (KeyError, TypeError, IndexError) as exc:
                raise ValueError(f"{path}:{ln}: malformed detection record ({exc})") from exc
    return out


def write_detections(images, path):
    with open(path, "w") as fh:
        for im in images:
            rec = {
                "image_id": im.image_id,
                "candidates": [[d.box.x, d.box.y, d.box.w, d.box.h, d.score] for d in im.candidates],
                "ground_truth": [[g.x, g.y, g.w, g.h] for g in im.ground_truth],
            }
            fh.write(json.dumps(rec) + "\n")
    return Path(path)


def read_counts(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"image_id", "count"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must be image_id,count")
        return {row["image_id"]: int(row["count"]) for row in reader}


def write_pr_curve(curve, best, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall", "f_measure", "tp", "detections", "ground_truth", "best"])
        for p in curve:
            w.writerow([f"{p.threshold:.6g}", f"{p.precision:.6f}", f"{p.recall:.6f}",
                        f"{p.f_measure:.6f}", p.tp, p.n_detections, p.n_ground_truth,
                        int(best is not None and p is best)])
    return Path(path)
