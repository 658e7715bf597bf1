import numpy as np
import pytest

from metashap.errors import ValidationError
from metashap.pipeline import PipelineConfig, StageError, recommend, stage
from metashap.space import encode


@pytest.fixture(scope="module")
def rec(synth_kb):
    cfg = PipelineConfig(k_neighbors=4, n_trees=40, explain_size=256)
    return recommend(synth_kb.kb, synth_kb.kb.meta_registry["d00"], "synthetic", cfg, exclude="d00", dataset_label="d00")


def test_stage_wraps_errors():
    with pytest.raises(StageError) as info:
        with stage("retrieval"):
            raise ValidationError("boom")
    assert info.value.stage == "retrieval" and isinstance(info.value.cause, ValidationError)


def test_nested_stage_keeps_inner_name():
    with pytest.raises(StageError) as info:
        with stage("outer"):
            with stage("inner"):
                raise RuntimeError("x")
    assert info.value.stage == "inner"


def test_neighbors_exclude_query_and_share_cluster(rec, synth_kb):
    ids = rec.neighborhood.dataset_ids
    assert "d00" not in ids and len(ids) == 4
    assert {synth_kb.clusters[i] for i in ids} == {synth_kb.clusters["d00"]}
    assert rec.report.provenance["neighbors"] == list(ids)


def test_report_matches_ground_truth(rec, synth_kb):
    gt = synth_kb.truths["d00"]
    assert list(rec.report.selected) == gt.ranking(synth_kb.kb.spaces["synthetic"].names)[:3]
    assert rec.report.surrogate_r2 >= 0.8


def test_warm_start_is_best_neighbor_row(rec):
    meta = rec.meta_dataset
    best = meta.X[int(np.argmax(meta.y))]
    assert np.allclose(encode(rec.report.warm_start, meta.space), best)


def test_recommend_is_deterministic(rec, synth_kb):
    cfg = PipelineConfig(k_neighbors=4, n_trees=40, explain_size=256)
    again = recommend(synth_kb.kb, synth_kb.kb.meta_registry["d00"], "synthetic", cfg, exclude="d00", dataset_label="d00")
    assert again.report.to_json() == rec.report.to_json()


def test_unknown_algorithm_names_stage(synth_kb):
    with pytest.raises(StageError) as info:
        recommend(synth_kb.kb, synth_kb.kb.meta_registry["d00"], "nope")
    assert info.value.stage == "retrieval"


def test_config_round_trip():
    cfg = PipelineConfig(top_m=2, tau=0.7)
    assert PipelineConfig(**cfg.to_dict()) == cfg
