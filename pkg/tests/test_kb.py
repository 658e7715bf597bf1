import json

import pytest

from metashap.errors import LoadError, ValidationError
from metashap.kb import KBRecord, KnowledgeBase, add_meta_features, append_records, load_kb, query, save_kb
from metashap.metafeatures import SCHEMA, MetaFeatureVector
from metashap.space import CONTINUOUS, HyperparameterSpace, ParamSpec

SPACE = HyperparameterSpace((ParamSpec("x", CONTINUOUS, (0.0, 1.0), default=0.5),))
VEC = MetaFeatureVector(tuple(float(i) for i in range(len(SCHEMA))))


@pytest.fixture
def singleton():
    return KnowledgeBase((KBRecord("d1", "alg1", {"x": 0.5}, 0.9),), {"d1": VEC}, {"alg1": SPACE})


def test_empty_bundle(tmp_path):
    save_kb(KnowledgeBase(), tmp_path)
    kb = load_kb(tmp_path)
    assert kb.size == 0 and kb.meta_registry == {} and kb.counts_by_dataset() == {}


def test_singleton_round_trip(tmp_path, singleton):
    save_kb(singleton, tmp_path)
    kb = load_kb(tmp_path)
    assert kb.size == 1
    assert kb.records == singleton.records
    assert kb.meta_registry == singleton.meta_registry
    assert kb.spaces == singleton.spaces
    assert query(kb, "alg1", {"d1"}) == list(singleton.records)
    assert query(kb, "alg1", set()) == []


def test_benchgen_counts(tmp_path, synth_kb):
    synth_kb.save(tmp_path)
    kb = load_kb(tmp_path)
    assert kb.size == 4000 and len(kb.meta_registry) == 10
    assert kb.counts_by_dataset() == synth_kb.emission_log
    with open(tmp_path / "records.jsonl") as fh:
        assert sum(1 for _ in fh) == 4000
    # round trip is field-exact
    assert kb.records == synth_kb.kb.records
    assert kb.meta_registry == synth_kb.kb.meta_registry


def test_query_partition(synth_kb):
    kb = synth_kb.kb
    ids = sorted(kb.meta_registry)
    picked = ids[:3]
    got = query(kb, synth_kb.algorithm_id, picked)
    # linear-scan recount
    assert len(got) == sum(1 for r in kb.records if r.dataset_id in picked)
    parts = [ids[:3], ids[3:7], ids[7:]]
    joined = sorted(
        (kb.records.index(r) for p in parts for r in query(kb, synth_kb.algorithm_id, p))
    )
    assert joined == list(range(kb.size))


def test_query_unknown_algorithm(singleton):
    with pytest.raises(ValidationError):
        query(singleton, "nope", {"d1"})


def _write_bundle(path, lines):
    save_kb(KnowledgeBase((), {"d1": VEC}, {"alg1": SPACE}), path)
    with open(path / "records.jsonl", "w") as fh:
        fh.write("\n".join(lines) + "\n")


@pytest.mark.parametrize(
    "bad, fragment",
    [
        ({"dataset_id": "d9", "algorithm_id": "alg1", "config": {"x": 0.5}, "performance": 0.5}, "unknown dataset_id"),
        ({"dataset_id": "d1", "algorithm_id": "alg9", "config": {"x": 0.5}, "performance": 0.5}, "unknown algorithm_id"),
        ({"dataset_id": "d1", "algorithm_id": "alg1", "config": {"x": 0.5}, "performance": 1.5}, "outside [0, 1]"),
        ({"dataset_id": "d1", "algorithm_id": "alg1", "config": {"y": 0.5}, "performance": 0.5}, "records.jsonl line 2"),
    ],
)
def test_load_rejects_bad_record_with_line(tmp_path, bad, fragment):
    good = {"dataset_id": "d1", "algorithm_id": "alg1", "config": {"x": 0.1}, "performance": 0.5}
    _write_bundle(tmp_path, [json.dumps(good), json.dumps(bad)])
    with pytest.raises(ValidationError, match="line 2"):
        try:
            load_kb(tmp_path)
        except ValidationError as exc:
            assert fragment in str(exc)
            raise


def test_missing_file_is_load_error(tmp_path):
    with pytest.raises(LoadError):
        load_kb(tmp_path)


def test_append_and_register(tmp_path, singleton):
    save_kb(singleton, tmp_path)
    add_meta_features(tmp_path, "d2", VEC)
    n = append_records(tmp_path, [KBRecord("d2", "alg1", {"x": 0.25}, 0.3)])
    kb = load_kb(tmp_path)
    assert n == 2 == kb.size
    assert kb.records[-1].dataset_id == "d2"
    with pytest.raises(ValidationError):
        append_records(tmp_path, [KBRecord("d3", "alg1", {"x": 0.25}, 0.3)])


def test_duplicates_kept(tmp_path, singleton):
    rec = singleton.records[0]
    kb = KnowledgeBase((rec, rec), singleton.meta_registry, singleton.spaces)
    save_kb(kb, tmp_path)
    assert load_kb(tmp_path).size == 2


def test_registry_header_versioned(tmp_path, singleton):
    save_kb(singleton, tmp_path)
    first = (tmp_path / "meta_features.csv").read_text().splitlines()[0]
    assert first.startswith("# schema=metafeatures/")
