import itertools
import json

import pytest
from hypothesis import given, settings, strategies as st

from subitize import data
from subitize.data import AnnotationRecord, CountLabel, DatasetManifest, ManifestEntry, SplitSpec


def test_count_label_serialisation():
    assert len(CountLabel) == 5
    assert str(CountLabel.FOUR_PLUS) == "4"
    assert CountLabel.parse("4+") is CountLabel.FOUR_PLUS
    assert CountLabel.parse("4") is CountLabel.FOUR_PLUS
    assert CountLabel.from_count(7) is CountLabel.FOUR_PLUS
    with pytest.raises(ValueError):
        CountLabel.parse("5")


@pytest.mark.parametrize("votes,expected", [
    ((1, 1, 1, 1, 2), CountLabel.ONE),
    ((2, 2, 2, 1, 1), None),
    ((0, 0, 0, 0, 0), CountLabel.ZERO),
])
def test_consolidate_examples(votes, expected):
    kept, excluded = data.consolidate_annotations([AnnotationRecord("a", votes)])
    if expected is None:
        assert kept == [] and excluded == ["a"]
    else:
        assert kept == [("a", expected)]


def test_consolidate_exhaustive_over_multisets():
    for votes in itertools.combinations_with_replacement(range(5), 5):
        kept, _ = data.consolidate_annotations([AnnotationRecord("x", votes)])
        top = max(votes.count(c) for c in range(5))
        assert bool(kept) == (top >= 4)


def test_wrong_vote_count_is_malformed():
    with pytest.raises(data.ManifestError):
        AnnotationRecord("a", (1, 1, 1))


def test_majority_category():
    assert data.majority_category([{"animal"}, {"animal"}, {"people"}]) == {"animal"}
    assert data.majority_category([{"animal", "people"}, {"people"}, {"animal"}]) == {"animal", "people"}
    assert data.majority_category([{"food"}, {"vehicle"}, {"other"}]) == frozenset()
    votes = [{"animal", "food"}, {"food"}, {"animal"}]
    for perm in itertools.permutations(votes):
        assert data.majority_category(list(perm)) == {"animal", "food"}


def _manifest(n, cats=None):
    return DatasetManifest(ManifestEntry(f"img{i}.png", CountLabel(i % 5),
                                         frozenset(cats[i]) if cats else frozenset())
                           for i in range(n))


def test_split_sizes_and_determinism():
    m = _manifest(10)
    tr, te = data.split_dataset(m, SplitSpec(0.8, 3))
    assert (len(tr), len(te)) == (8, 2)
    tr2, te2 = data.split_dataset(m, SplitSpec(0.8, 3))
    assert tr == tr2 and te == te2
    big = _manifest(13707)
    assert len(data.split_dataset(big, SplitSpec(0.8, 0))[0]) == 10966
    with pytest.raises(data.ManifestError):
        data.split_dataset(DatasetManifest(), SplitSpec())


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 2**63 - 1), frac=st.floats(0.05, 0.95))
def test_split_is_a_partition(n, seed, frac):
    m = _manifest(n)
    tr, te = data.split_dataset(m, SplitSpec(frac, seed))
    a = {e.image_path for e in tr}
    b = {e.image_path for e in te}
    assert not a & b and a | b == {e.image_path for e in m}


def test_leave_one_category_out():
    cats = [{"animal"}, {"animal", "people"}, {"food"}, set(), {"vehicle"}, {"other"}]
    m = _manifest(6, cats)
    tr, te = data.leave_one_category_out(m, "animal")
    assert len(tr) == 4 and len(te) == 2
    zeros = DatasetManifest([ManifestEntry("z.png", CountLabel.ZERO)])
    _, te = data.leave_one_category_out(m, "animal", zeros)
    assert [e.image_path for e in te][-1] == "z.png"
    tr, _ = data.leave_one_category_out(_manifest(6, [{"food"}] * 6), "animal")
    assert len(tr) == 6
    with pytest.raises(data.ManifestError):
        data.leave_one_category_out(m, "plants")
    assert data.category_counts(m)["animal"] == 2


def test_manifest_unique_paths():
    with pytest.raises(data.ManifestError):
        DatasetManifest([ManifestEntry("a", CountLabel.ONE), ManifestEntry("a", CountLabel.TWO)])


def test_manifest_and_annotation_io(tmp_path):
    m = DatasetManifest([ManifestEntry("imgs/a.png", CountLabel.FOUR_PLUS, frozenset({"food", "animal"})),
                         ManifestEntry("imgs/b.png", CountLabel.ZERO)])
    p = data.write_manifest(m, tmp_path / "m.csv")
    assert p.read_text().splitlines()[1] == "imgs/a.png,4,animal;food"
    back = data.read_manifest(p)
    assert back[0].image_path == str(tmp_path / "imgs/a.png")
    assert back[0].label is CountLabel.FOUR_PLUS and back[0].categories == {"animal", "food"}
    (tmp_path / "ann.csv").write_text("image_id,v1,v2,v3,v4,v5\nq,4,4,4,4,3\n")
    recs = data.read_annotations(tmp_path / "ann.csv")
    assert data.consolidate_annotations(recs)[0] == [("q", CountLabel.FOUR_PLUS)]
    (tmp_path / "bad.csv").write_text("image_path,label,categories\nx.png,1,plants\n")
    with pytest.raises(data.ManifestError):
        data.read_manifest(tmp_path / "bad.csv")


def test_write_split_sidecar(tmp_path):
    tr, te = data.split_dataset(_manifest(10), SplitSpec(0.8, 5))
    data.write_split(tr, te, SplitSpec(0.8, 5), tmp_path)
    side = json.loads((tmp_path / "split.json").read_text())
    assert side["seed"] == 5 and side["train_fraction"] == 0.8
    assert len(data.read_manifest(tmp_path / "train.csv", resolve=False)) == 8
