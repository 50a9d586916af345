"""End-to-end exit criteria. Each test prints one pass/fail line.

The expensive artefacts (composite corpora, the trained model) are built once
per module and shared. The whole module takes roughly half an hour on one core.
"""
import itertools
import time
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from subitize import detect, evaluate, featviz, retrieval, synth, toybench, toylib
from subitize.data import read_manifest
from subitize.detect import DetectionWindow as D
from subitize.evaluate import RankedList
from subitize.imaging import BoundingBox as B
from subitize.nnet import SubitNetSpec, TrainConfig, features, load_image_set, predict_batch, train
from subitize.nnet import training as nntrain
from subitize.nnet.gradcheck import flip_sign, gradient_check

from oracles import ap11_exact, ndcg_direct, painted_visibility, pearson, rerender_instances, tie_ranks

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

SPEC = SubitNetSpec()
SYNTH = synth.SynthConfig()
TRAIN = TrainConfig(total_iters=8000, step_iters=7000, seed=0)
STAGE2 = TrainConfig(total_iters=2000, step_iters=1500, seed=1)


# ------------------------------------------------------------------ shared artefacts

@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def lib_a(work):
    lib = toylib.build_library(11, 40, 600, "A")
    toylib.write_library(lib, work / "libA")
    return synth.load_library(work / "libA")


@pytest.fixture(scope="module")
def lib_b(work):
    lib = toylib.build_library(12, 20, 240, "B")
    toylib.write_library(lib, work / "libB")
    return synth.load_library(work / "libB")


@pytest.fixture(scope="module")
def corpus(work, lib_a):
    """The 2,500-image training corpus, generated twice from the same seed."""
    times = []
    for name in ("corpus", "corpus_again"):
        t = time.perf_counter()
        res = synth.generate_corpus(lib_a, SYNTH, 500, 1, out_dir=work / name)
        times.append(time.perf_counter() - t)
        assert res.complete
    return work / "corpus", work / "corpus_again", times


def _corpus(work, lib, name, seed, per_class=100):
    res = synth.generate_corpus(lib, SYNTH, per_class, seed, out_dir=work / name)
    assert res.complete
    return work / name


@pytest.fixture(scope="module")
def heldout_a(work, lib_a):
    return _corpus(work, lib_a, "heldout_a", 3)


@pytest.fixture(scope="module")
def shifted(work, lib_b):
    return _corpus(work, lib_b, "b_train", 5), _corpus(work, lib_b, "b_test", 6)


def _images(path):
    return load_image_set(read_manifest(path / "manifest.csv"), SPEC)


@pytest.fixture(scope="module")
def model(corpus):
    t = time.perf_counter()
    state, curve = train(_images(corpus[0]), SPEC, TRAIN)
    return state, time.perf_counter() - t


def _scores(state, ds):
    p = predict_batch(state, ds.images)
    aps, m = evaluate.map_per_class(p, ds.labels)
    return float((p.argmax(axis=1) == ds.labels).mean()), m, p


# ------------------------------------------------------------------ criteria

def test_01_gradient_check(criterion):
    t = time.perf_counter()
    reps = [gradient_check(tolerance=1e-2, eps=1e-3, seed=s) for s in (0, 1)]
    bad = gradient_check(tolerance=1e-2, eps=1e-3, seed=0, corrupt=flip_sign)
    dt = time.perf_counter() - t
    ok = all(r.passed for r in reps) and not bad.passed and dt < 30
    errs = ", ".join(f"{r.max_rel_error:.2e}" for r in reps)
    assert criterion(1, ok, f"max rel err {errs}; flipped {bad.max_rel_error:.2e} -> "
                            f"{'fails' if not bad.passed else 'passes'}; {dt:.1f}s")


def test_02_metric_oracles(criterion):
    t = time.perf_counter()
    n_ap = 0
    for n in range(1, 9):
        for rels in itertools.product((0, 1), repeat=n):
            for extra in (0, 1):
                total = sum(rels) + extra
                if not total:
                    continue
                got = evaluate.average_precision_voc07(
                    RankedList(np.arange(n, 0, -1.0), np.array(rels, bool), total))
                want = ap11_exact(rels, total)
                # the float result must be the nearest double to a value within 1e-12 of the exact one
                assert abs(Fraction(got) - want) <= Fraction(1, 10**12), (rels, total)
                n_ap += 1
    n_rho = 0
    for n in range(2, 7):
        for perm in itertools.permutations(range(n)):
            refs = [list(range(n))] + ([[0] + list(range(n - 1))] if n > 2 else [])  # plus a tied one
            for other in refs:
                want = pearson(tie_ranks(other), tie_ranks(perm))
                assert abs(featviz.spearman_rho(other, perm) - want) <= 1e-12
                n_rho += 1
    g = np.random.default_rng(0)
    for h in (1, 5, 20):
        for _ in range(200):
            r = list(g.integers(0, 2, h + 5))
            assert abs(retrieval.ndcg_at_h(r, h) - ndcg_direct(r, h)) <= 1e-12
    assert detect.iou(B(0, 0, 2, 2), B(1, 1, 2, 2)) == 1 / 7
    assert detect.iou(B(0, 0, 4, 2), B(2, 0, 4, 2)) == 1 / 3
    assert detect.iou(B(0, 0, 3, 3), B(1, 0, 3, 3)) == 6 / 12
    dt = time.perf_counter() - t
    assert criterion(2, dt < 60, f"{n_ap} AP rankings, {n_rho} rank pairs, 600 nDCG lists, iou fixtures; {dt:.1f}s")


def test_03_f_measure_arithmetic(criterion):
    rows = [((77.5, 74.0), 75.7), ((79.6, 79.5), 79.5), ((83.9, 81.7), 82.8)]
    got = [100 * detect.f_measure(p / 100, r / 100) for (p, r), _ in rows]
    ok = all(abs(g - want) <= 0.05 for g, (_, want) in zip(got, rows))
    assert criterion(3, ok, "F = " + ", ".join(f"{g:.2f}" for g in got))


def test_04_chance_protocol(criterion):
    counts = [3261, 6041, 2030, 1309, 1066]
    labels = np.repeat(np.arange(5), counts)
    t = time.perf_counter()
    per, mean = evaluate.chance_baseline(labels, trials=100, seed=0)
    dt = time.perf_counter() - t
    prevalence = np.array(counts) / sum(counts)
    dev = 100 * (np.array(per) - prevalence)
    ok = np.all(np.abs(dev) <= 3) and abs(100 * mean - 22.8) <= 3 and dt < 120
    assert criterion(4, ok, "AP-prevalence (pts) " + " ".join(f"{d:+.2f}" for d in dev)
                     + f"; mean {100 * mean:.2f} vs 22.8; {dt:.1f}s")


def test_05_corpus_soundness(criterion, corpus, lib_a):
    first, again, times = corpus
    t = time.perf_counter()
    same = synth.corpus_digest(first) == synth.corpus_digest(again)
    records = toybench.read_provenance(first)
    n_images = len(read_manifest(first / "manifest.csv"))
    failures = 0
    for rec in records:
        if not rec.get("placements"):
            continue
        inst, pos = rerender_instances(lib_a.cutouts[rec["recipe"]["cutout_id"]], rec)
        if min(painted_visibility(inst, pos, SYNTH.canvas_size)) < 0.5:
            failures += 1
    check = time.perf_counter() - t
    # the 5-minute budget applies to each generation run
    ok = same and n_images == 2500 and failures == 0 and max(times) < 300
    assert criterion(5, ok, f"{n_images} images, regenerated {'identically' if same else 'DIFFERENTLY'}, "
                            f"{failures} visibility failures; generation {times[0]:.0f}s / {times[1]:.0f}s, "
                            f"checks {check:.0f}s")


def test_06_desk_scale_learning(criterion, model, heldout_a):
    state, dt = model
    acc, m, _ = _scores(state, _images(heldout_a))
    ok = acc >= 0.80 and m >= 0.85 and dt < 1200
    assert criterion(6, ok, f"accuracy {acc:.3f} (>=0.80), mAP {m:.3f} (>=0.85); training {dt:.0f}s")


def test_07_two_stage_direction(criterion, model, corpus, shifted):
    state, _ = model
    b_train, b_test = (_images(p) for p in shifted)
    syn_only = _scores(state, b_test)[1]
    full, _ = nntrain.two_stage_finetune(_images(corpus[0]), b_train, SPEC,
                                         replace(TRAIN, total_iters=0), STAGE2, init=state)
    frozen, _ = nntrain.two_stage_finetune(_images(corpus[0]), b_train, SPEC,
                                           replace(TRAIN, total_iters=0), nntrain.frozen_config(STAGE2),
                                           init=state)
    m_full = _scores(full, b_test)[1]
    m_frozen = _scores(frozen, b_test)[1]
    ok = m_full >= syn_only and m_frozen < m_full
    assert criterion(7, ok, f"mAP on shifted set: two-stage {m_full:.3f}, synthetic-only {syn_only:.3f}, "
                            f"frozen features {m_frozen:.3f}")


def test_08_cueing_benefit(criterion, model, heldout_a):
    state, _ = model
    records = toybench.read_provenance(heldout_a)
    dets = toybench.make_detection_set(records, SYNTH.canvas_size, seed=0)
    truth = {toybench.record_id(r): int(r["label"]) for r in records}
    ds = _images(heldout_a)
    pred = predict_batch(state, ds.images).argmax(axis=1)
    predicted = {p.split("/")[-1].rsplit(".", 1)[0]: int(c) for p, c in zip(ds.paths, pred)}
    # the 4+ class cues four windows
    _, best = detect.sweep_threshold(dets, detect.candidate_thresholds(dets))
    f_gt = detect.match_and_score(detect.cue_all(dets, truth)).f_measure
    f_pred = detect.match_and_score(detect.cue_all(dets, predicted)).f_measure
    ok = f_gt >= best.f_measure and f_pred >= best.f_measure - 0.01
    assert criterion(8, ok, f"F: GT counts {f_gt:.3f}, predicted counts {f_pred:.3f}, "
                            f"best fixed threshold {best.f_measure:.3f} (t={best.threshold:.3f})")


def test_09_retrieval_direction(criterion, model, heldout_a, lib_a):
    state, _ = model
    t = time.perf_counter()
    records = toybench.read_provenance(heldout_a)
    ds = _images(heldout_a)
    by_id = {p.split("/")[-1].rsplit(".", 1)[0]: i for i, p in enumerate(ds.paths)}
    sos = predict_batch(state, ds.images[[by_id[toybench.record_id(r)] for r in records]])
    index, judgments, fams = toybench.make_retrieval_index(records, lib_a.tags, seed=0, sos=sos)
    base = retrieval.run_benchmark(index, fams, "baseline", judgments)
    combined = retrieval.run_benchmark(index, fams, "sos", judgments)
    dt = time.perf_counter() - t
    groups = (retrieval.NumberGroup.TWO, retrieval.NumberGroup.THREE, retrieval.NumberGroup.MANY)
    ok = all(combined.group_mean(g) > base.group_mean(g) for g in groups) and dt < 600
    assert criterion(9, ok, "nDCG@20 sos/baseline: " + ", ".join(
        f"{g.value} {combined.group_mean(g):.3f}/{base.group_mean(g):.3f}" for g in groups) + f"; {dt:.0f}s")


def test_10_novelty_self_test(criterion, model, heldout_a):
    state, _ = model
    ds = _images(heldout_a)
    fm = features(state, nntrain.center_crop(ds.images, SPEC.input_size))
    ch = featviz.channel_rankings(fm)
    scores = featviz.novelty_scores(ch, ch)
    ok = all(abs(s.score - 1.0) <= 1e-12 for s in scores) and featviz.select_novel(scores, 0.3) == []
    assert criterion(10, ok, f"{len(scores)} channels, min S_i {min(s.score for s in scores):.12f}, "
                             f"selected {len(featviz.select_novel(scores, 0.3))}")
