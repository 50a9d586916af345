"""Annotation consolidation, dataset manifests, and reproducible splits."""
from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

CATEGORIES = ("animal", "food", "people", "vehicle", "other")


class ManifestError(ValueError):
    """Malformed annotation or manifest input."""


class CountLabel(IntEnum):
    ZERO = 0
    ONE = 1
    TWO = 2
    THREE = 3
    FOUR_PLUS = 4

    def __str__(self):
        return str(int(self))

    @classmethod
    def parse(cls, value) -> "CountLabel":
        s = str(value).strip()
        if s in ("4+", "4"):
            return cls.FOUR_PLUS
        try:
            return cls(int(s))
        except (ValueError, TypeError):
            raise ManifestError(f"invalid count class {value!r}") from None

    @classmethod
    def from_count(cls, n: int) -> "CountLabel":
        if n < 0:
            raise ValueError("negative count")
        return cls(min(n, 4))


NUM_CLASSES = len(CountLabel)


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    votes: tuple

    def __post_init__(self):
        if len(self.votes) != 5:
            raise ManifestError(f"{self.image_id}: expected 5 votes, got {len(self.votes)}")
        object.__setattr__(self, "votes", tuple(CountLabel.parse(v) for v in self.votes))


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    label: CountLabel
    categories: frozenset = field(default_factory=frozenset)


class DatasetManifest(list):
    """List of ManifestEntry with unique image paths."""

    def __init__(self, entries=()):
        super().__init__(entries)
        seen = set()
        for e in self:
            if e.image_path in seen:
                raise ManifestError(f"duplicate image path {e.image_path!r}")
            seen.add(e.image_path)

    @property
    def labels(self):
        return np.array([int(e.label) for e in self], dtype=np.int64)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


# ----------------------------------------------------------- operations

def consolidate_annotations(records):
    """Keep images where some class gets at least 4 of 5 votes; returns (kept, excluded)."""
    kept, excluded = [], []
    for rec in records:
        if len(rec.votes) != 5:
            raise ManifestError(f"{rec.image_id}: expected 5 votes, got {len(rec.votes)}")
        label, n = Counter(rec.votes).most_common(1)[0]
        if n >= 4:
            kept.append((rec.image_id, CountLabel(label)))
        else:
            excluded.append(rec.image_id)
    return kept, excluded


def majority_category(votes):
    if len(votes) != 3:
        raise ValueError(f"expected 3 voter sets, got {len(votes)}")
    tally = Counter(c for v in votes for c in set(v))
    return frozenset(c for c, n in tally.items() if n >= 2)


def split_dataset(manifest, spec: SplitSpec):
    """Seeded uniform shuffle, then the first round(fraction * N) entries train."""
    n = len(manifest)
    if n == 0:
        raise ManifestError("cannot split an empty manifest")
    order = np.random.default_rng(spec.seed).permutation(n)
    k = int(round(spec.train_fraction * n))
    train = DatasetManifest(manifest[i] for i in sorted(order[:k]))
    test = DatasetManifest(manifest[i] for i in sorted(order[k:]))
    return train, test


def leave_one_category_out(manifest, category, test_manifest=None):
    """Hold out every image carrying ``category``.

    ``test`` is those images plus the Zero-class images of ``test_manifest``
    (the original test split) when given; ``train`` is the remainder of
    ``manifest``.
    """
    if category not in CATEGORIES:
        raise ManifestError(f"unknown category {category!r}")
    held = [e for e in manifest if category in e.categories]
    train = DatasetManifest(e for e in manifest if category not in e.categories)
    zeros = [e for e in (test_manifest or []) if e.label == CountLabel.ZERO]
    held_paths = {e.image_path for e in held}
    test = DatasetManifest(held + [e for e in zeros if e.image_path not in held_paths])
    return train, test


def category_counts(manifest):
    counts = Counter(c for e in manifest for c in e.categories)
    return {c: counts.get(c, 0) for c in CATEGORIES}


# ------------------------------------------------------------------ I/O

def read_annotations(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = ["image_id", "v1", "v2", "v3", "v4", "v5"]
        if reader.fieldnames is None or any(k not in reader.fieldnames for k in need):
            raise ManifestError(f"{path}: header must be {','.join(need)}")
        return [AnnotationRecord(row["image_id"], tuple(row[f"v{i}"] for i in range(1, 6)))
                for row in reader]


def _parse_categories(text):
    cats = frozenset(c.strip() for c in (text or "").split(";") if c.strip())
    bad = cats - set(CATEGORIES)
    if bad:
        raise ManifestError(f"unknown categories {sorted(bad)}")
    return cats


def read_manifest(path, resolve=True) -> DatasetManifest:
    """Read manifest.csv; relative image paths resolve against the manifest's directory."""
    path = Path(path)
    base = path.parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"image_path", "label"} <= set(reader.fieldnames):
            raise ManifestError(f"{path}: header must include image_path,label[,categories]")
        for row in reader:
            p = row["image_path"]
            if resolve and not Path(p).is_absolute():
                p = str(base / p)
            entries.append(ManifestEntry(p, CountLabel.parse(row["label"]),
                                         _parse_categories(row.get("categories"))))
    return DatasetManifest(entries)


def write_manifest(manifest, path, relative_to=None):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_path", "label", "categories"])
        for e in manifest:
            p = e.image_path
            if relative_to is not None:
                try:
                    p = str(Path(p).relative_to(relative_to))
                except ValueError:
                    pass
            w.writerow([p, str(e.label), ";".join(sorted(e.categories))])
    return path


def write_split(train, test, spec: SplitSpec, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(train, out_dir / "train.csv")
    write_manifest(test, out_dir / "test.csv")
    sidecar = {"seed": spec.seed, "train_fraction": spec.train_fraction,
               "n_train": len(train), "n_test": len(test)}
    (out_dir / "split.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return out_dir
