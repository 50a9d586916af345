"""Number-object retrieval: k-NN tag voting over an embedding index, score
combination with number tags or subitizing scores, and nDCG@h."""
from __future__ import annotations

import csv
import enum
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CountLabel, NUM_CLASSES

INDEX_MAGIC = b"SIDX"
INDEX_VERSION = 1
_HAS_SOS = 1


class IndexFormatError(ValueError):
    pass


class NumberGroup(enum.Enum):
    ONE = "one"
    TWO = "two"
    THREE = "three"
    MANY = "many"

    @property
    def count_label(self) -> CountLabel:
        return _GROUP_LABEL[self]

    @classmethod
    def parse(cls, text):
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            raise ValueError(f"unknown number group {text!r}; expected one/two/three/many") from None


_GROUP_LABEL = {
    NumberGroup.ONE: CountLabel.ONE,
    NumberGroup.TWO: CountLabel.TWO,
    NumberGroup.THREE: CountLabel.THREE,
    NumberGroup.MANY: CountLabel.FOUR_PLUS,
}


def parse_query(text):
    """'two animals' -> (NumberGroup.TWO, 'animals')."""
    parts = str(text).split(None, 1)
    if len(parts) != 2:
        raise ValueError(f"query must be '<number> <object>', got {text!r}")
    return NumberGroup.parse(parts[0]), parts[1].strip()


@dataclass
class EmbeddingIndex:
    ids: list
    vectors: np.ndarray
    tags: list                      # one frozenset per item
    sos: np.ndarray | None = None   # optional (N, 5) subitizing probabilities
    _knn: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2 or len(self.ids) != len(self.vectors) or len(self.tags) != len(self.ids):
            raise ValueError("ids, vectors and tags must describe the same items")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding entries must be finite")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("item ids must be unique")
        self.tags = [frozenset(t) for t in self.tags]
        if self.sos is not None:
            self.sos = np.asarray(self.sos, dtype=np.float32)
            if self.sos.shape != (len(self.ids), NUM_CLASSES):
                raise ValueError(f"sos scores must be ({len(self.ids)}, {NUM_CLASSES})")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def position(self, item_id):
        return self.ids.index(item_id)

    def tag_mask(self, tag):
        return np.array([tag in t for t in self.tags], dtype=bool)


# ------------------------------------------------------------------ index file

def _put_str(fh, s):
    b = s.encode("utf-8")
    fh.write(struct.pack("<H", len(b)))
    fh.write(b)


def _get_str(fh):
    (n,) = struct.unpack("<H", _read(fh, 2))
    return _read(fh, n).decode("utf-8")


def _read(fh, n):
    b = fh.read(n)
    if len(b) != n:
        raise IndexFormatError("index file truncated")
    return b


def write_index(index: EmbeddingIndex, path):
    """Header: magic, version, item count, dimension, flags. Then per item:
    id, float32 vector (little-endian), tag list, and the optional 5 SOS scores."""
    flags = _HAS_SOS if index.sos is not None else 0
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<IIII", INDEX_VERSION, len(index), index.dim, flags))
        for i, item in enumerate(index.ids):
            _put_str(fh, item)
            fh.write(index.vectors[i].astype("<f4").tobytes())
            tags = sorted(index.tags[i])
            fh.write(struct.pack("<H", len(tags)))
            for t in tags:
                _put_str(fh, t)
            if flags & _HAS_SOS:
                fh.write(index.sos[i].astype("<f4").tobytes())
    return Path(path)


def read_index(path) -> EmbeddingIndex:
    with open(path, "rb") as fh:
        if _read(fh, 4) != INDEX_MAGIC:
            raise IndexFormatError(f"{path}: not an embedding index")
        version, n, dim, flags = struct.unpack("<IIII", _read(fh, 16))
        if version != INDEX_VERSION:
            raise IndexFormatError(f"{path}: unsupported index version {version}")
        ids, vecs, tags, sos = [], np.empty((n, dim), np.float32), [], []
        for i in range(n):
            ids.append(_get_str(fh))
            vecs[i] = np.frombuffer(_read(fh, 4 * dim), dtype="<f4")
            (nt,) = struct.unpack("<H", _read(fh, 2))
            tags.append(frozenset(_get_str(fh) for _ in range(nt)))
            if flags & _HAS_SOS:
                sos.append(np.frombuffer(_read(fh, 4 * NUM_CLASSES), dtype="<f4"))
        if fh.read(1):
            raise IndexFormatError(f"{path}: trailing bytes after last item")
    return EmbeddingIndex(ids, vecs, tags, np.array(sos) if flags & _HAS_SOS else None)


# ------------------------------------------------------------------ scoring

def nearest_neighbors(vectors, query, k):
    """Indices of the ``k`` nearest rows by Euclidean distance; ties in row order."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if k > len(vectors):
        raise ValueError(f"k={k} exceeds index size {len(vectors)}")
    if k < 1:
        raise ValueError("k must be >= 1")
    d = ((vectors - np.asarray(query, dtype=np.float64)) ** 2).sum(axis=1)
    return np.argsort(d, kind="stable")[:k]


def knn_tag_scores(index: EmbeddingIndex, query_vector, tag, k=75):
    """Fraction of the ``k`` nearest items that carry ``tag``."""
    nn = nearest_neighbors(index.vectors, query_vector, k)
    return float(sum(tag in index.tags[j] for j in nn)) / k


def neighbor_table(index: EmbeddingIndex, k=75):
    """k-NN of every indexed item (itself included), cached on the index."""
    if k not in index._knn:
        index._knn[k] = np.stack([nearest_neighbors(index.vectors, v, k) for v in index.vectors])
    return index._knn[k]


def item_tag_scores(index: EmbeddingIndex, tag, k=75):
    """knn_tag_scores for every item, using its own embedding as the query."""
    nn = neighbor_table(index, k)
    return index.tag_mask(tag)[nn].mean(axis=1)


def combine_text(object_score, number_tag_score):
    return np.multiply(object_score, number_tag_score)


def combine_sos(object_score, sos_scores, group):
    if not isinstance(group, NumberGroup):
        group = NumberGroup.parse(group)
    sos_scores = np.asarray(sos_scores)
    return np.multiply(object_score, sos_scores[..., int(group.count_label)])


def ndcg_at_h(relevances, h=20):
    """nDCG@h for binary relevances, with the ideal DCG assuming >= h relevant items."""
    if h < 1:
        raise ValueError("h must be >= 1")
    rel = [float(r) for r in list(relevances)[:h]]
    if len(rel) < h:
        warnings.warn(f"only {len(rel)} ranked items for nDCG@{h}; padding with rel=0")
        rel += [0.0] * (h - len(rel))
    dcg = sum((2.0 ** r - 1.0) / math.log2(i + 2) for i, r in enumerate(rel))
    idcg = sum(1.0 / math.log2(i + 2) for i in range(h))
    return dcg / idcg


# ------------------------------------------------------------------ benchmark

METHODS = ("baseline", "text", "sos")


def query_scores(index: EmbeddingIndex, tag, group, method, k=75):
    """Per-item retrieval score for the query '<group> <tag>'."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    obj = item_tag_scores(index, tag, k)
    if method == "baseline":
        return obj
    if method == "text":
        return combine_text(obj, item_tag_scores(index, group.value, k))
    if index.sos is None:
        raise ValueError("index carries no subitizing scores; the sos method needs them")
    return combine_sos(obj, index.sos, group)


def rank_items(scores, top):
    """Positions of the ``top`` best items, ties in item order."""
    return np.argsort(-np.asarray(scores), kind="stable")[:top]


def retrieve(index, query, method, k=75, top=20):
    group, tag = parse_query(query)
    s = query_scores(index, tag, group, method, k)
    return [(index.ids[j], float(s[j])) for j in rank_items(s, top)]


def read_judgments(path):
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"query", "item_id", "rel"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must be query,item_id,rel")
        for row in reader:
            rel = int(row["rel"])
            if rel not in (0, 1):
                raise ValueError(f"{path}: rel must be 0 or 1, got {rel}")
            out[(row["query"], row["item_id"])] = rel
    return out


def write_judgments(judgments, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query", "item_id", "rel"])
        for (q, item), rel in judgments.items():
            w.writerow([q, item, int(rel)])
    return Path(path)


@dataclass
class BenchmarkResult:
    method: str
    per_query: dict       # (tag, group value) -> nDCG
    missing: int = 0

    def group_mean(self, group):
        g = group.value if isinstance(group, NumberGroup) else group
        vals = [v for (t, q), v in self.per_query.items() if q == g]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def overall(self):
        return float(np.mean(list(self.per_query.values())))


def run_benchmark(index, object_tags, method, judgments, k=75, h=20):
    """nDCG@h for every (object tag, number group) query under one method."""
    per, missing = {}, 0
    for tag in object_tags:
        for group in NumberGroup:
            q = f"{group.value} {tag}"
            s = query_scores(index, tag, group, method, k)
            rels = []
            for j in rank_items(s, h):
                key = (q, index.ids[j])
                if key not in judgments:
                    missing += 1
                rels.append(judgments.get(key, 0))
            per[(tag, group.value)] = ndcg_at_h(rels, h)
    if missing:
        warnings.warn(f"{missing} retrieved items had no judgment; treated as rel=0")
    return BenchmarkResult(method, per, missing)


def write_benchmark(results, path):
    """Rows per object tag and group plus per-group and overall means, one column per method."""
    results = list(results)
    keys = list(results[0].per_query)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["object", "group"] + [r.method for r in results])
        for tag, g in keys:
            w.writerow([tag, g] + [f"{r.per_query[(tag, g)]:.6f}" for r in results])
        for g in NumberGroup:
            w.writerow(["mean", g.value] + [f"{r.group_mean(g):.6f}" for r in results])
        w.writerow(["mean", "all"] + [f"{r.overall:.6f}" for r in results])
    return Path(path)
