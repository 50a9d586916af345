"""Central-difference check of SubitNet's analytic gradients.

The analytic gradients come from the float32 network. Central differences
are evaluated on the same parameter values promoted to ``oracle_dtype``
(float64 by default), so the oracle is not limited by float32 rounding of
the loss. Coordinates whose +/-eps probes change any ReLU on/off state or
max-pool winner are resampled: the secant across a kink is not a derivative.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .model import ModelState, SubitNetSpec, backward, forward, init_state

SMALL_SPEC = SubitNetSpec(input_size=8, in_channels=3, channels=(4, 6, 8), n_classes=5)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_param: dict = field(default_factory=dict)
    n_coords: int = 0
    skipped_kinks: int = 0
    finite: bool = True

    @property
    def passed(self):
        return self.finite and self.max_rel_error <= self.tolerance

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"max_rel_error={self.max_rel_error:.3e} tolerance={self.tolerance:g} "
                f"coords={self.n_coords} skipped_kinks={self.skipped_kinks} {status}")


def relative_error(a, n, floor=1e-2):
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dividing by noise."""
    return abs(a - n) / max(abs(a), abs(n), floor)


def _loss_and_pattern(state, x, y):
    logits, cache = forward(state, x)
    loss, _, _ = L.softmax_cross_entropy(logits, y)
    return loss, [(z > 0, idx) for _, _, z, idx in cache["blocks"]]


def _same_pattern(a, b):
    return all(np.array_equal(m1, m2) and np.array_equal(i1, i2) for (m1, i1), (m2, i2) in zip(a, b))


def gradient_check(spec=SMALL_SPEC, tolerance=1e-2, seed=0, eps=1e-3, coords_per_param=64,
                   batch=4, zero_input=False, corrupt=None, oracle_dtype=np.float64) -> GradCheckReport:
    """Compare every parameter's analytic gradient with central differences.

    ``coords_per_param`` kink-free coordinates are checked per tensor (all of
    them for smaller tensors). ``corrupt`` may be a callable applied to the
    analytic gradient dict, for negative controls.
    """
    rng = np.random.default_rng(seed)
    state = init_state(spec, seed)
    for k in state.params:
        if k.endswith(".b"):
            state.params[k] = (0.1 * rng.standard_normal(state.params[k].shape)).astype(np.float32)
    shape = (batch, spec.input_size, spec.input_size, spec.in_channels)
    # inputs span the same range as mean-subtracted images
    x = np.zeros(shape, np.float32) if zero_input else rng.uniform(-0.5, 0.5, shape).astype(np.float32)
    y = rng.integers(0, spec.n_classes, batch)

    logits, cache = forward(state, x)
    _, gl, _ = L.softmax_cross_entropy(logits, y)
    grads = backward(state, cache, gl)
    if corrupt is not None:
        grads = corrupt(grads)

    probe = ModelState(spec, {k: v.astype(oracle_dtype) for k, v in state.params.items()})
    xo = x.astype(oracle_dtype)
    _, base = _loss_and_pattern(probe, xo, y)

    report = GradCheckReport(0.0, tolerance)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            report.finite = False
        flat = probe.params[name].reshape(-1)
        want = min(coords_per_param, flat.size)
        worst, checked = 0.0, 0
        for c in rng.permutation(flat.size):
            if checked == want:
                break
            old = flat[c]
            flat[c] = old + eps
            lp, pat_p = _loss_and_pattern(probe, xo, y)
            flat[c] = old - eps
            lm, pat_m = _loss_and_pattern(probe, xo, y)
            flat[c] = old
            if not (_same_pattern(pat_p, base) and _same_pattern(pat_m, base)):
                report.skipped_kinks += 1
                continue
            num = (lp - lm) / (2 * eps)
            worst = max(worst, relative_error(float(g.reshape(-1)[c]), num))
            checked += 1
        report.per_param[name] = worst
        report.n_coords += checked
        report.max_rel_error = max(report.max_rel_error, worst)
    return report


def flip_sign(grads):
    return {k: -v for k, v in grads.items()}
