"""Textual key=value pipeline configuration.

Keys are dotted ``section.field`` names (``synth.canvas_size``,
``train.base_lr``, ``stage2.total_iters``, ...) plus a top-level ``seed``.
Lines starting with ``#`` are comments. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .nnet.training import TrainConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EvalConfig:
    chance_trials: int = 100
    iou_threshold: float = 0.5
    novelty_threshold: float = 0.3
    top_patches: int = 9
    patch_fraction: float = 0.6
    knn_k: int = 75
    ndcg_h: int = 20
    gradcheck_tolerance: float = 1e-2
    gradcheck_eps: float = 1e-3


@dataclass
class PipelineConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    stage2: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    SECTIONS = ("synth", "train", "stage2", "eval")

    def items(self):
        yield "seed", self.seed
        for sec in self.SECTIONS:
            obj = getattr(self, sec)
            for f in dataclasses.fields(obj):
                yield f"{sec}.{f.name}", getattr(obj, f.name)

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        per = {s: {} for s in self.SECTIONS}
        seed = self.seed
        for key, raw in overrides.items():
            if key == "seed":
                seed = _coerce(raw, self.seed, key)
                continue
            sec, _, name = key.partition(".")
            if sec not in per:
                raise ConfigError(f"unknown config key {key!r}")
            obj = getattr(self, sec)
            names = {f.name for f in dataclasses.fields(obj)}
            if name not in names:
                raise ConfigError(f"unknown config key {key!r}")
            per[sec][name] = _coerce(raw, getattr(obj, name), key)
        try:
            parts = {s: dataclasses.replace(getattr(self, s), **per[s]) for s in self.SECTIONS}
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return PipelineConfig(seed=seed, **parts)

    def dumps(self):
        lines = [f"# subitize {__version__} resolved configuration"]
        lines += [f"{k} = {_format(v)}" for k, v in self.items()]
        return "\n".join(lines) + "\n"

    def write(self, out_dir, name="config.txt"):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        p = out_dir / name
        p.write_text(self.dumps())
        return p


def _format(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(raw, default, key):
    if not isinstance(raw, str):
        return raw
    s = raw.strip()
    try:
        if isinstance(default, bool):
            if s.lower() in ("true", "1", "yes", "on"):
                return True
            if s.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(s)
        if isinstance(default, int):
            return int(s)
        if isinstance(default, float):
            return float(s)
        if isinstance(default, tuple):
            items = [x.strip() for x in s.split(",")]
            if len(items) != len(default):
                raise ValueError(f"expected {len(default)} comma-separated values")
            return tuple(_coerce(x, d, key) for x, d in zip(items, default))
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    return s


def parse_config_text(text, base: PipelineConfig | None = None) -> PipelineConfig:
    overrides = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value")
        k, v = line.split("=", 1)
        k = k.strip()
        if k in overrides:
            raise ConfigError(f"line {n}: duplicate key {k!r}")
        overrides[k] = v
    return (base or PipelineConfig()).with_overrides(overrides)


def load_config(path) -> PipelineConfig:
    return parse_config_text(Path(path).read_text())
