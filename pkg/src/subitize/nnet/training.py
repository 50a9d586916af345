"""Training loop, augmentation, prediction, and the two-stage fine-tuning scheme."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import imaging
from .model import ModelState, SubitNetSpec, forward, init_state, loss_and_grads, sgd_momentum_step
from .layers import softmax

log = logging.getLogger(__name__)

CANVAS_RATIO = 8.0 / 7.0
# fixed input normalisation, roughly the pixel statistics of the composites
INPUT_MEAN = 0.5
INPUT_STD = 0.2


def normalize(x):
    return (x - np.float32(INPUT_MEAN)) / np.float32(INPUT_STD)


def denormalize(x):
    return x * np.float32(INPUT_STD) + np.float32(INPUT_MEAN)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    base_lr: float = 0.001
    lr_decay: float = 0.1
    step_iters: int = 2000
    total_iters: int = 8000
    momentum: float = 0.9
    seed: int = 0
    hflip: bool = True
    random_crop: bool = True
    freeze_features: bool = False
    log_every: int = 50

    def __post_init__(self):
        if self.total_iters < 0 or self.step_iters < 1 or self.batch_size < 1:
            raise ValueError("need total_iters >= 0, step_iters >= 1, batch_size >= 1")

    def lr_at(self, t):
        return self.base_lr * self.lr_decay ** (t // self.step_iters)


def canvas_side(spec: SubitNetSpec):
    return int(round(spec.input_size * CANVAS_RATIO))


@dataclass
class ImageSet:
    """Images resized to the training canvas (N, S, S, 3), labels, and source paths."""
    images: np.ndarray
    labels: np.ndarray
    paths: list

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx)
        return ImageSet(self.images[idx], self.labels[idx], [self.paths[i] for i in idx])


def to_canvas(img, side):
    return imaging.resize_bilinear(imaging.as_raster(img), side, side)[..., :3]


def load_image_set(manifest, spec: SubitNetSpec) -> ImageSet:
    """Decode and resize every manifest image; undecodable files are skipped with a warning."""
    side = canvas_side(spec)
    imgs, labels, paths = [], [], []
    for e in manifest:
        try:
            img = imaging.load_image(e.image_path)
        except (OSError, imaging.ImageDecodeError, imaging.UnsupportedFormatError) as exc:
            log.warning("skipping %s: %s", e.image_path, exc)
            continue
        imgs.append(to_canvas(img, side))
        labels.append(int(e.label))
        paths.append(e.image_path)
    if not imgs:
        raise ValueError("no loadable images in manifest")
    return ImageSet(np.stack(imgs).astype(np.float32), np.array(labels, dtype=np.int64), paths)


def augment(batch, rng, size, hflip=True, random_crop=True):
    """Random crop of ``size`` from each canvas and horizontal flip with p=0.5."""
    n, side = batch.shape[0], batch.shape[1]
    span = side - size + 1
    if random_crop:
        off = rng.integers(0, span, size=(n, 2))
    else:
        off = np.full((n, 2), (side - size) // 2)
    flips = rng.random(n) < 0.5 if hflip else np.zeros(n, dtype=bool)
    out = np.empty((n, size, size, batch.shape[3]), dtype=np.float32)
    for i in range(n):
        oy, ox = off[i]
        crop = batch[i, oy:oy + size, ox:ox + size]
        out[i] = crop[:, ::-1] if flips[i] else crop
    return normalize(out)


def center_crop(batch, size):
    o = (batch.shape[1] - size) // 2
    return normalize(np.ascontiguousarray(batch[:, o:o + size, o:o + size]))


def train(data, spec: SubitNetSpec, cfg: TrainConfig, init: ModelState | None = None,
          progress=None):
    """Run ``cfg.total_iters`` SGD iterations. Returns (state, curve rows (iter, loss, lr)).

    ``data`` is an ImageSet or a manifest. Batches walk seeded per-epoch
    permutations; all randomness comes from ``cfg.seed``.
    """
    if not isinstance(data, ImageSet):
        data = load_image_set(data, spec)
    state = init.copy() if init is not None else init_state(spec, cfg.seed)
    curve = []
    if cfg.total_iters == 0:
        return state, curve
    if not len(data):
        raise ValueError("empty training set")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    n = len(data)
    order = rng.permutation(n)
    pos = 0
    for t in range(cfg.total_iters):
        if pos + cfg.batch_size > n:
            order = rng.permutation(n) if n >= cfg.batch_size else np.concatenate(
                [rng.permutation(n) for _ in range(cfg.batch_size // n + 1)])
            pos = 0
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        x = augment(data.images[idx], rng, spec.input_size, cfg.hflip, cfg.random_crop)
        loss, grads, _ = loss_and_grads(state, x, data.labels[idx],
                                        features_too=not cfg.freeze_features)
        lr = cfg.lr_at(t)
        sgd_momentum_step(state, grads, lr, cfg.momentum)
        if t % cfg.log_every == 0 or t == cfg.total_iters - 1:
            curve.append((t, loss, lr))
            if progress is not None:
                progress(t, loss, lr)
    return state, curve


def two_stage_finetune(synthetic, real, spec, cfg1: TrainConfig, cfg2: TrainConfig, init=None):
    """Stage 1 on synthetic data, then stage 2 on real data keeping every layer.

    Momentum buffers are cleared between stages and the stage-2 schedule
    restarts from iteration 0. Returns (state, (curve1, curve2)).
    """
    if not len(synthetic) or not len(real):
        raise ValueError("both training sets must be non-empty")
    stage1, curve1 = train(synthetic, spec, cfg1, init)
    start = stage1.copy()
    start.reset_momentum()
    stage2, curve2 = train(real, spec, cfg2, start)
    return stage2, (curve1, curve2)


def predict_batch(state: ModelState, canvases, batch=256):
    """Softmax scores for canvases already at the training canvas size (N, S, S, 3)."""
    out = []
    for i in range(0, len(canvases), batch):
        x = center_crop(canvases[i:i + batch], state.spec.input_size)
        logits, _ = forward(state, x, keep_cache=False)
        out.append(softmax(logits.astype(np.float64)))
    if not out:
        return np.zeros((0, state.spec.n_classes))
    return np.concatenate(out)


def predict(state: ModelState, image):
    """5-vector of softmax scores for one raster or image path (resize, then centre crop)."""
    if isinstance(image, (str, Path)):
        image = imaging.load_image(image)
    canvas = to_canvas(image, canvas_side(state.spec))
    return predict_batch(state, canvas[None])[0]


def write_loss_curve(curve, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loss", "lr"])
        for t, loss, lr in curve:
            w.writerow([t, f"{loss:.6f}", f"{lr:.6g}"])
    return path


def frozen_config(cfg: TrainConfig) -> TrainConfig:
    return replace(cfg, freeze_features=True)
