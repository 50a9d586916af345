"""SubitNet: three conv/ReLU/maxpool blocks, global average pool, and a 5-way linear layer."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L

CHECKPOINT_MAGIC = b"SUBT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SubitNetSpec:
    input_size: int = 64
    in_channels: int = 3
    channels: tuple = (16, 32, 64)
    n_classes: int = 5

    def __post_init__(self):
        if self.input_size % (2 ** len(self.channels)):
            raise ValueError("input_size must be divisible by 2**blocks")

    def param_shapes(self):
        shapes = {}
        cin = self.in_channels
        for i, c in enumerate(self.channels, 1):
            shapes[f"conv{i}.w"] = (3, 3, cin, c)
            shapes[f"conv{i}.b"] = (c,)
            cin = c
        shapes["fc.w"] = (cin, self.n_classes)
        shapes["fc.b"] = (self.n_classes,)
        return shapes

    @property
    def feature_params(self):
        return [k for k in self.param_shapes() if k.startswith("conv")]


@dataclass
class ModelState:
    spec: SubitNetSpec
    params: dict
    momentum: dict = field(default_factory=dict)
    iteration: int = 0

    def __post_init__(self):
        shapes = self.spec.param_shapes()
        if set(self.params) != set(shapes):
            raise ValueError(f"parameter names {sorted(self.params)} do not match spec")
        for k, shp in shapes.items():
            if self.params[k].shape != shp:
                raise ValueError(f"{k}: shape {self.params[k].shape} != {shp}")
        for k in shapes:
            self.momentum.setdefault(k, np.zeros(shapes[k], dtype=np.float32))

    def copy(self):
        return ModelState(self.spec, {k: v.copy() for k, v in self.params.items()},
                          {k: v.copy() for k, v in self.momentum.items()}, self.iteration)

    def reset_momentum(self):
        for v in self.momentum.values():
            v[...] = 0.0


def init_state(spec: SubitNetSpec, seed=0, zero=False, dtype=np.float32) -> ModelState:
    """He (fan-in) normal init for weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if zero or name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:-1]))
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    return ModelState(spec, params)


def forward(state: ModelState, x, keep_cache=True):
    """Logits for a batch x of shape (N, S, S, 3). Returns (logits, cache)."""
    p = state.params
    cache = {"blocks": []}
    h = x
    for i in range(1, len(state.spec.channels) + 1):
        z, cols = L.conv2d_forward(h, p[f"conv{i}.w"], p[f"conv{i}.b"])
        a = L.relu_forward(z)
        o, idx = L.maxpool2_forward(a)
        if keep_cache:
            cache["blocks"].append((h, cols, z, idx))
        h = o
    cache["features"] = h
    g = L.global_avg_pool_forward(h)
    cache["pooled"] = g
    logits = L.fc_forward(g, p["fc.w"], p["fc.b"])
    return logits, cache


def backward(state: ModelState, cache, grad_logits, features_too=True):
    """Parameter gradients. With ``features_too=False`` only the fc layer is differentiated."""
    p = state.params
    grads = {}
    gg, grads["fc.w"], grads["fc.b"] = L.fc_backward(cache["pooled"], p["fc.w"], grad_logits)
    if not features_too:
        return grads
    gh = L.global_avg_pool_backward(gg, cache["features"].shape)
    for i in range(len(state.spec.channels), 0, -1):
        h, cols, z, idx = cache["blocks"][i - 1]
        ga = L.maxpool2_backward(gh, idx)
        gz = L.relu_backward(z, ga)
        gh, grads[f"conv{i}.w"], grads[f"conv{i}.b"] = L.conv2d_backward(
            h, p[f"conv{i}.w"], gz, cols, need_input_grad=i > 1)
    return grads


def features(state: ModelState, x):
    """Output of the last conv block (after pooling), shape (N, s, s, C)."""
    _, cache = forward(state, x, keep_cache=False)
    return cache["features"]


def loss_and_grads(state, x, labels, features_too=True):
    logits, cache = forward(state, x)
    loss, gl, probs = L.softmax_cross_entropy(logits, labels)
    return loss, backward(state, cache, gl, features_too), probs


def sgd_momentum_step(state: ModelState, grads, lr, momentum=0.9) -> ModelState:
    """v <- momentum * v + g ; w <- w - lr * v, for every parameter present in ``grads``."""
    for k, g in grads.items():
        if k not in state.params or g.shape != state.params[k].shape:
            raise L.ShapeError(f"gradient {k!r} does not match a parameter")
        v = state.momentum[k]
        v *= momentum
        v += g
        state.params[k] -= np.asarray(lr, dtype=state.params[k].dtype) * v
    state.iteration += 1
    return state


# ------------------------------------------------------------ checkpoints

def _write_tensor(fh, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def save_checkpoint(state: ModelState, path):
    """Binary checkpoint: magic, version, tensor count, named tensors, momentum, iteration."""
    path = Path(path)
    names = list(state.spec.param_shapes())
    meta = {"meta.input_size": np.array([state.spec.input_size], dtype=np.float32)}
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(names) + len(meta)))
        for name, arr in list(meta.items()) + [(n, state.params[n]) for n in names]:
            b = name.encode()
            fh.write(struct.pack("<I", len(b)) + b)
            _write_tensor(fh, arr)
        for n in names:
            _write_tensor(fh, state.momentum[n])
        fh.write(struct.pack("<Q", state.iteration))
    return path


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> ModelState:
    data = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    def tensor():
        (nd,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{nd}I", take(4 * nd))
        count = int(np.prod(dims)) if nd else 1
        return np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)

    if take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a SubitNet checkpoint")
    version, count = struct.unpack("<II", take(8))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    named = {}
    for _ in range(count):
        (ln,) = struct.unpack("<I", take(4))
        name = take(ln).decode()
        named[name] = tensor()
    input_size = int(named.pop("meta.input_size", np.array([64]))[0])
    convs = sorted((k for k in named if k.startswith("conv") and k.endswith(".w")),
                   key=lambda k: int(k[4:-2]))
    spec = SubitNetSpec(input_size=input_size, in_channels=named["conv1.w"].shape[2],
                        channels=tuple(named[k].shape[3] for k in convs),
                        n_classes=named["fc.w"].shape[1])
    names = list(spec.param_shapes())
    momentum = {n: tensor() for n in names}
    (iteration,) = struct.unpack("<Q", take(8))
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes")
    return ModelState(spec, {n: named[n] for n in names}, momentum, iteration)
