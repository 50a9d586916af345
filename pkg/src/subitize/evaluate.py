"""Subitizing metrics: VOC07 11-point AP, per-class mAP, chance baseline, confusion matrix."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import NUM_CLASSES

log = logging.getLogger(__name__)

# k/10 rather than np.arange(0, 1.1, 0.1): the arange values are not exact
# tenths (0.30000000000000004), which would drop recall levels of exactly 0.3
RECALL_LEVELS = tuple(k / 10 for k in range(11))


@dataclass
class RankedList:
    scores: np.ndarray
    relevant: np.ndarray
    total_positives: int

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.relevant = np.asarray(self.relevant, dtype=bool)
        if self.scores.shape != self.relevant.shape:
            raise ValueError("scores and relevance flags differ in length")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")
        if self.total_positives < int(self.relevant.sum()):
            raise ValueError("total_positives is smaller than the relevant items listed")

    @classmethod
    def from_items(cls, items, total_positives=None):
        items = list(items)
        scores = [s for s, _ in items]
        rel = [bool(r) for _, r in items]
        return cls(np.array(scores, dtype=np.float64), np.array(rel, dtype=bool),
                   sum(rel) if total_positives is None else total_positives)


def precision_recall(ranked: RankedList):
    """Precision and recall after each rank, ties kept in input order."""
    order = np.argsort(-ranked.scores, kind="stable")
    rel = ranked.relevant[order]
    tp = np.cumsum(rel)
    k = np.arange(1, len(rel) + 1)
    return tp / k, tp / ranked.total_positives


def average_precision_voc07(ranked: RankedList) -> float:
    """Mean over r in {0, 0.1, ..., 1} of the best precision at recall >= r."""
    if ranked.total_positives < 1:
        raise ValueError("AP needs at least one positive")
    if len(ranked.scores) == 0:
        return 0.0
    prec, rec = precision_recall(ranked)
    total = 0.0
    for r in RECALL_LEVELS:
        mask = rec >= r
        total += prec[mask].max() if mask.any() else 0.0
    return total / len(RECALL_LEVELS)


def map_per_class(scores, labels, n_classes=NUM_CLASSES):
    """One-vs-rest AP per class and their unweighted mean.

    Classes with no positive label get ``None`` and are left out of the mean.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != (len(labels), n_classes):
        raise ValueError(f"expected scores of shape ({len(labels)}, {n_classes}), got {scores.shape}")
    aps = []
    for c in range(n_classes):
        pos = labels == c
        if not pos.any():
            warnings.warn(f"class {c} has no positives; AP undefined and excluded from the mean")
            aps.append(None)
            continue
        aps.append(average_precision_voc07(RankedList(scores[:, c], pos, int(pos.sum()))))
    defined = [a for a in aps if a is not None]
    return aps, (float(np.mean(defined)) if defined else float("nan"))


def chance_baseline(labels, trials=100, seed=0, n_classes=NUM_CLASSES):
    """APs of uniform random scores, averaged over ``trials``. Returns (per-class, mean)."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("labels must be non-empty")
    rng = np.random.default_rng(seed)
    sums = np.zeros(n_classes)
    present = np.array([(labels == c).any() for c in range(n_classes)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _ in range(trials):
            aps, _ = map_per_class(rng.random((len(labels), n_classes)), labels, n_classes)
            sums += [a if a is not None else 0.0 for a in aps]
    per = [float(s / trials) if ok else None for s, ok in zip(sums, present)]
    defined = [a for a in per if a is not None]
    return per, float(np.mean(defined))


@dataclass
class ConfusionMatrix:
    counts: np.ndarray   # rows: ground truth, columns: prediction

    @property
    def row_normalized(self):
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(sums > 0, self.counts / np.maximum(sums, 1), 0.0)

    @property
    def recall(self):
        return np.diag(self.row_normalized)

    @property
    def accuracy(self):
        return float(np.trace(self.counts) / max(self.counts.sum(), 1))


def confusion(scores, labels, n_classes=NUM_CLASSES) -> ConfusionMatrix:
    """Argmax predictions (np.argmax: lowest index wins ties) tallied against labels."""
    pred = np.argmax(np.asarray(scores), axis=1)
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (np.asarray(labels, dtype=np.int64), pred), 1)
    return ConfusionMatrix(counts)


def write_report(out_dir, aps, mean_ap, cm: ConfusionMatrix, extra=None):
    """ap.csv (per-class AP + mAP) and confusion.csv (counts and row percentages)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = ["0", "1", "2", "3", "4+"]
    with open(out_dir / "ap.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "ap"])
        for n, a in zip(names, aps):
            w.writerow([n, "" if a is None else f"{a:.6f}"])
        w.writerow(["mean", f"{mean_ap:.6f}"])
        for k, v in (extra or {}).items():
            w.writerow([k, v])
    pct = cm.row_normalized * 100
    with open(out_dir / "confusion.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["truth"] + [f"pred_{n}" for n in names] + [f"pct_{n}" for n in names])
        for i, n in enumerate(names):
            w.writerow([n] + [int(c) for c in cm.counts[i]] + [f"{p:.2f}" for p in pct[i]])
    return out_dir
