import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from metashap.attribution import CoalitionGame, interaction_exact
from metashap.benchgen import (
    ShapeTerm,
    SurfaceModel,
    SyntheticSurface,
    generate_kb,
    load_ground_truth,
    load_surfaces,
    make_surface,
    term_moments,
    variance_contributions,
)
from metashap.errors import ValidationError
from metashap.kb import load_kb
from metashap.retrieval import knn
from metashap.space import from_unit, snap_unit

from oracles import brute_knn

TERMS = [
    ShapeTerm("bump", 0.5, 0.2),
    ShapeTerm("bump", 0.1, 0.3),
    ShapeTerm("bump", 0.9, 0.25),
    ShapeTerm("ramp", 0.4, 0.08, True),
    ShapeTerm("ramp", 0.6, 0.1, False),
    ShapeTerm("step", 0.35, 0.1, True),
    ShapeTerm("step", 0.65, 0.1, False),
]


@pytest.mark.parametrize("term", TERMS, ids=lambda t: f"{t.kind}-{t.center}")
def test_moments_against_quadrature(term):
    m1, m2 = term.continuous_moments()
    pts = [term.center] if term.kind == "step" else None
    e1 = quad(lambda u: float(term(np.array(u))), 0, 1, points=pts, limit=200)[0]
    e2 = quad(lambda u: float(term(np.array(u))) ** 2, 0, 1, points=pts, limit=200)[0]
    assert m1 == pytest.approx(e1, abs=1e-9) and m2 == pytest.approx(e2, abs=1e-9)


@pytest.mark.parametrize("term", TERMS, ids=lambda t: f"{t.kind}-{t.center}")
def test_shapes_bounded_and_peak_at_one(term):
    u = np.linspace(0, 1, 10001)
    s = term(u)
    assert s.min() >= 0.0 and s.max() <= 1.0 + 1e-12
    assert term(np.array(term.argmax())) == pytest.approx(s.max(), abs=1e-9)
    assert s.max() == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("term", TERMS, ids=lambda t: f"{t.kind}-{t.center}")
def test_good_region_is_half_peak_superlevel_set(term):
    lo, hi = term.good_region(0.5)
    u = np.linspace(0, 1, 20001)
    inside = term(u) >= 0.5
    assert u[inside].min() == pytest.approx(lo, abs=1e-4)
    assert u[inside].max() == pytest.approx(hi, abs=1e-4)


def test_null_term():
    t = ShapeTerm()
    assert np.all(t(np.linspace(0, 1, 5)) == 0) and t.continuous_moments() == (0.0, 0.0)


@pytest.mark.parametrize("k,n_rel,pairs", [(8, 0, 0), (8, 9, 0), (4, 2, 2), (4, 3, 4)])
def test_invalid_counts(k, n_rel, pairs):
    with pytest.raises(ValidationError):
        make_surface(k, n_rel, pairs)


def test_deterministic_per_seed():
    a, ga = make_surface(8, 3, 1, seed=4)
    b, gb = make_surface(8, 3, 1, seed=4)
    assert a.to_dict() == b.to_dict()
    assert np.array_equal(ga.variance, gb.variance)
    assert make_surface(8, 3, 1, seed=5)[0].to_dict() != a.to_dict()


@pytest.mark.parametrize("seed", range(5))
def test_two_relevant_of_eight(seed):
    surface, gt = make_surface(8, 2, seed=seed)
    assert np.count_nonzero(gt.variance > 0) == 2
    assert np.all(gt.variance[[i for i in range(8) if i not in surface.relevant()]] == 0.0)
    assert len(gt.relevant) == 2 and set(gt.good_regions) == set(gt.relevant)


def test_weights_decay_geometrically():
    surface, _ = make_surface(8, 4, seed=1)
    assert sorted(w for w in surface.weights if w > 0) == [0.125, 0.25, 0.5, 1.0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 4), st.integers(0, 3))
def test_output_in_unit_interval(seed, n_rel, pairs):
    pairs = min(pairs, n_rel * (n_rel - 1) // 2)
    surface, _ = make_surface(6, n_rel, pairs, seed=seed)
    y = surface.evaluate_unit(np.random.default_rng(seed).random((500, 6)))
    assert y.min() >= 0.0 and y.max() <= 1.0 + 1e-12


@pytest.mark.parametrize("seed,pairs", [(0, 0), (1, 0), (2, 1), (3, 3)])
def test_variance_shares_match_monte_carlo(seed, pairs):
    surface, gt = make_surface(8, 3, pairs, seed=seed)
    # independent oracle: total variance of the surface on 10^6 uniform grid-snapped points
    U = snap_unit(np.random.default_rng(seed).random((1_000_000, 8)), surface.space)
    assert gt.variance.sum() == pytest.approx(surface.evaluate_unit(U).var(), rel=0.02)
    mc = variance_contributions(surface, n_mc=1_000_000, seed=seed)
    live = gt.variance > 0
    np.testing.assert_allclose(mc[live], gt.variance[live], rtol=0.02)


def test_main_effect_of_bump_matches_sampling():
    surface, gt = make_surface(3, 1, seed=0, relevant=[0], shapes=("bump",))
    i = 0
    u = np.random.default_rng(1).random(1_000_000)
    s = surface.terms[i](u) * surface.weights[i] / surface.total
    assert gt.variance[i] == pytest.approx(s.var(), rel=0.02)


def test_discrete_moments_are_exact_grid_averages():
    surface, _ = make_surface(3, 1, seed=0, relevant=[2], shapes=("bump",))  # x2 is integer [1, 64]
    grid = np.linspace(0, 1, 64)
    s = surface.terms[2](grid)
    assert term_moments(surface, 2) == pytest.approx((s.mean(), (s * s).mean()), abs=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_optimum_is_not_beaten_by_sampling(seed):
    surface, gt = make_surface(6, 3, 1, seed=seed)
    U = snap_unit(np.random.default_rng(seed).random((20000, 6)), surface.space)
    assert surface.evaluate_unit(U).max() <= gt.optimum_value + 1e-9
    assert surface(gt.optimum_config) == pytest.approx(gt.optimum_value)


def test_additive_surface_has_zero_interactions():
    surface, _ = make_surface(5, 5, 0, seed=2)
    rng = np.random.default_rng(0)
    bg = from_unit(rng.random((32, 5)), surface.space)
    for x in from_unit(rng.random((5, 5)), surface.space):
        game = CoalitionGame(SurfaceModel(surface), bg, x)
        for i in range(5):
            for j in range(i + 1, 5):
                assert abs(interaction_exact(game, i, j)) <= 1e-3


def test_surface_round_trip():
    surface, _ = make_surface(6, 3, 2, noise_sigma=0.01, seed=9)
    back = SyntheticSurface.from_dict(json.loads(json.dumps(surface.to_dict())))
    assert back == surface


# --------------------------------------------------------------------- KB


def test_kb_counts_and_clipping():
    skb = generate_kb(10, 400, surface_family_seed=1, noise_sigma=0.5)
    assert len(skb.kb.records) == 4000
    perf = np.array([r.performance for r in skb.kb.records])
    assert perf.min() >= 0.0 and perf.max() <= 1.0
    assert perf.min() == 0.0 and perf.max() == 1.0  # noise this large must hit the clip
    assert skb.emission_log == {f"d{d:02d}": 400 for d in range(10)}


def test_too_few_datasets():
    with pytest.raises(ValidationError):
        generate_kb(1, 10)


def test_clusters_share_relevance(synth_kb):
    rel = {d: frozenset(s.relevant()) for d, s in synth_kb.surfaces.items()}
    for c in set(synth_kb.clusters.values()):
        members = [d for d, cc in synth_kb.clusters.items() if cc == c]
        assert len({rel[d] for d in members}) == 1
    assert len(set(rel.values())) == 2


def test_neighbors_come_from_the_same_cluster(synth_kb):
    reg = synth_kb.kb.meta_registry
    rows = {d: list(v.values) for d, v in reg.items()}
    for d in reg:
        nb = knn(reg[d], reg, k_neighbors=4, exclude=d)
        # registry-wide normalisation; the query itself comes back first at distance 0
        brute = [i for i, _ in brute_knn(rows[d], rows, 5) if i != d]
        assert list(nb.dataset_ids) == brute[:4]
        assert {synth_kb.clusters[i] for i in nb.dataset_ids} == {synth_kb.clusters[d]}


def test_bundle_round_trip(synth_kb, tmp_path):
    synth_kb.save(tmp_path)
    kb = load_kb(tmp_path)
    assert len(kb.records) == len(synth_kb.kb.records)
    assert kb.records[0] == synth_kb.kb.records[0]
    assert load_surfaces(tmp_path / "surfaces.json") == synth_kb.surfaces
    truths = load_ground_truth(tmp_path / "ground_truth.json")
    for d, t in synth_kb.truths.items():
        assert np.array_equal(truths[d].variance, t.variance) and truths[d].relevant == t.relevant


def test_generation_is_deterministic():
    a = generate_kb(3, 20, surface_family_seed=5)
    b = generate_kb(3, 20, surface_family_seed=5)
    assert a.kb.records == b.kb.records and a.kb.meta_registry == b.kb.meta_registry
