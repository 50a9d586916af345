import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subitize import evaluate
from subitize.evaluate import RankedList

from oracles import ap11_exact


def _ap(rels, total=None):
    n = len(rels)
    return evaluate.average_precision_voc07(
        RankedList(np.arange(n, 0, -1, dtype=float), np.array(rels, bool),
                   sum(rels) if total is None else total))


def test_trivial_cases():
    assert _ap([1, 1, 0, 0]) == 1.0
    assert _ap([1]) == 1.0
    assert _ap([0], total=1) == 0.0
    with pytest.raises(ValueError):
        _ap([0, 0])
    with pytest.raises(ValueError):
        RankedList([0.1, np.nan], [True, False], 1)


def test_alternating_ranking_matches_oracle():
    assert _ap([1, 0, 1, 0]) == pytest.approx(float(ap11_exact([1, 0, 1, 0], 2)), abs=1e-15)
    # by hand: recall 0..0.5 -> 1, recall 0.6..1 -> 2/3
    assert _ap([1, 0, 1, 0]) == pytest.approx((6 * 1 + 5 * 2 / 3) / 11)


def test_exact_tenths_recall_levels():
    # recall hits exactly 3/10 at rank 3; float arange thresholds would skip it
    rels = [1, 1, 1] + [0] * 7
    got = _ap(rels, total=10)
    assert got == pytest.approx(float(ap11_exact(rels, 10)), abs=1e-15)
    assert got == pytest.approx(4 / 11)


def test_exhaustive_small_rankings():
    for n in range(1, 7):
        for rels in itertools.product([0, 1], repeat=n):
            for extra in (0, 2):
                total = sum(rels) + extra
                if total == 0:
                    continue
                assert _ap(list(rels), total) == pytest.approx(float(ap11_exact(rels, total)), abs=1e-12)


def test_ties_keep_input_order():
    r = RankedList([0.5, 0.5, 0.5], [False, True, True], 2)
    prec, rec = evaluate.precision_recall(r)
    assert list(prec) == [0.0, 0.5, 2 / 3]


@settings(max_examples=80, deadline=None)
@given(scores=st.lists(st.integers(-50, 50), min_size=2, max_size=12, unique=True),
       data=st.data())
def test_monotone_transform_invariance(scores, data):
    rel = data.draw(st.lists(st.booleans(), min_size=len(scores), max_size=len(scores)))
    if not any(rel):
        rel[0] = True
    a = evaluate.average_precision_voc07(RankedList(scores, rel, sum(rel)))
    b = evaluate.average_precision_voc07(RankedList(np.exp(np.array(scores) / 10.0) * 3 + 1, rel, sum(rel)))
    assert a == b


@settings(max_examples=80, deadline=None)
@given(rels=st.lists(st.booleans(), min_size=2, max_size=10), k=st.integers(0, 8))
def test_swapping_positive_down_never_helps(rels, k):
    if not any(rels) or k + 1 >= len(rels):
        return
    if not (rels[k] is False and rels[k + 1] is True):
        rels = list(rels)
        rels[k], rels[k + 1] = False, True
    swapped = list(rels)
    swapped[k], swapped[k + 1] = True, False
    assert _ap(swapped) >= _ap(rels)


def test_map_per_class():
    labels = np.array([0, 1, 2, 3, 4, 1])
    onehot = np.eye(5)[labels]
    aps, m = evaluate.map_per_class(onehot, labels)
    assert aps == [1.0] * 5 and m == 1.0
    with pytest.warns(UserWarning):
        aps, m = evaluate.map_per_class(np.eye(5)[[0, 1]], np.array([0, 1]))
    assert aps[2] is None and m == 1.0


def test_chance_baseline():
    labels = np.repeat(np.arange(5), 2)
    per, m = evaluate.chance_baseline(labels, trials=100, seed=0)
    assert all(abs(a - 0.2) <= 0.05 + 0.2 for a in per)   # tiny set; AP of 2 positives in 10 is noisy
    a = evaluate.chance_baseline(labels, trials=1, seed=4)
    b = evaluate.chance_baseline(labels, trials=1, seed=4)
    assert a == b


def test_chance_prevalence_on_balanced_set():
    labels = np.repeat(np.arange(5), 200)
    per, m = evaluate.chance_baseline(labels, trials=20, seed=1)
    for a in per:
        assert a == pytest.approx(0.2, abs=0.05)


def test_confusion():
    labels = np.array([0, 1, 2, 3, 4, 4])
    cm = evaluate.confusion(np.eye(5)[labels], labels)
    assert np.array_equal(np.diag(cm.counts), [1, 1, 1, 1, 2]) and cm.accuracy == 1.0
    cm = evaluate.confusion(np.zeros((6, 5)), labels)     # all ties -> class 0
    assert cm.counts[:, 0].sum() == 6
    rn = cm.row_normalized
    assert np.allclose(rn.sum(axis=1), 1, atol=1e-9)
    perm = np.random.default_rng(0).permutation(6)
    s = np.random.default_rng(1).random((6, 5))
    assert np.array_equal(evaluate.confusion(s[perm], labels[perm]).counts,
                          evaluate.confusion(s, labels).counts)


def test_report_files(tmp_path):
    labels = np.array([0, 1, 2, 3, 4])
    aps, m = evaluate.map_per_class(np.eye(5), labels)
    evaluate.write_report(tmp_path, aps, m, evaluate.confusion(np.eye(5), labels))
    assert (tmp_path / "ap.csv").read_text().splitlines()[-1] == "mean,1.000000"
    assert (tmp_path / "confusion.csv").read_text().splitlines()[1].startswith("0,1,0,0,0,0,100.00")
