import pytest

from subitize import detect, retrieval, synth, toybench, toylib


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("tb")
    lib = toylib.build_library(5, 4, 6)
    toylib.write_library(lib, out / "lib")
    lib = synth.load_library(out / "lib")
    synth.generate_corpus(lib, synth.SynthConfig(canvas_size=64), 4, 1, out_dir=out / "corpus")
    return lib, toybench.read_provenance(out / "corpus")


def test_detection_set_structure(corpus):
    _, recs = corpus
    dets = toybench.make_detection_set(recs, 64, seed=0)
    assert [d.image_id for d in dets] == [toybench.record_id(r) for r in recs]
    for d, r in zip(dets, recs):
        assert len(d.ground_truth) == int(r["label"])
        for c in d.candidates:
            assert 0 <= c.box.x and c.box.x + c.box.w <= 64 + 1e-9
    assert toybench.make_detection_set(recs, 64, seed=0) == dets


def test_true_counts_beat_nothing(corpus):
    _, recs = corpus
    dets = toybench.make_detection_set(recs, 64, seed=0)
    counts = {toybench.record_id(r): int(r["label"]) for r in recs}
    cued = detect.match_and_score(detect.cue_all(dets, counts))
    assert cued.recall > 0.5 and cued.precision > 0.5


def test_retrieval_index_judgments(corpus):
    lib, recs = corpus
    index, judg, fams = toybench.make_retrieval_index(recs, lib.tags, seed=0)
    assert len(index) == len(recs) and set(fams) <= set(lib.tags.values())
    assert len(judg) == len(fams) * 4 * len(recs)
    by_id = {toybench.record_id(r): r for r in recs}
    for (q, item), rel in judg.items():
        group, fam = retrieval.parse_query(q)
        r = by_id[item]
        expect = toybench.record_family(r, lib.tags) == fam and min(int(r["label"]), 4) == int(group.count_label)
        assert rel == int(expect)
