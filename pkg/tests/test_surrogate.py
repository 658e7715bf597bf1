import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from metashap.benchgen import make_surface
from metashap.errors import ValidationError
from metashap.space import from_unit, to_unit
from metashap.surrogate import combine, fit_arrays, predict


@pytest.fixture(scope="module")
def quadratic():
    """Bump-only benchgen surface, 2000 LHS-free uniform rows with noise 0.01."""
    surf, gt = make_surface(8, 3, 0, seed=11, shapes=("bump", "bump", "bump"))
    rng = np.random.default_rng(5)
    U = rng.random((2000, 8))
    y = np.clip(surf.evaluate_unit(U) + 0.01 * rng.standard_normal(2000), 0, 1)
    X = from_unit(U, surf.space)
    return surf, X, y


@pytest.fixture(scope="module")
def quad_model(quadratic):
    _, X, y = quadratic
    return fit_arrays(X, y, seed=3)


def test_constant_target():
    X = np.random.default_rng(0).random((40, 3))
    m = fit_arrays(X, np.full(40, 0.7), seed=0, n_trees=10)
    probe = np.random.default_rng(1).random((25, 3)) * 4 - 2
    assert np.all(m.predict(probe) == 0.7)
    assert m.holdout_r2 == 0.0


def test_step_function():
    rng = np.random.default_rng(2)
    X = rng.random((200, 4))
    y = np.where(X[:, 1] > 0.4, 0.9, 0.2)
    assert fit_arrays(X, y, seed=0).holdout_r2 >= 0.95


def test_quadratic_fit_quality(quadratic, quad_model):
    surf, _, _ = quadratic
    assert quad_model.holdout_r2 >= 0.8
    U = np.random.default_rng(99).random((500, 8))
    err = np.abs(quad_model.predict(from_unit(U, surf.space)) - surf.evaluate_unit(U))
    assert err.mean() <= 0.05


def test_single_tree_interpolates():
    rng = np.random.default_rng(4)
    X = rng.random((30, 2))
    y = rng.random(30)
    m = fit_arrays(X, y, seed=0, n_trees=1, min_leaf=1, bootstrap=False, max_features=2, holdout_fraction=0.0)
    np.testing.assert_array_equal(m.predict(X), y)


def test_predict_shape_checks(quad_model):
    with pytest.raises(ValidationError):
        predict(quad_model, np.zeros(3))
    assert isinstance(predict(quad_model, np.zeros(8)), float)


def test_too_few_rows():
    with pytest.raises(ValidationError):
        fit_arrays(np.zeros((9, 2)), np.zeros(9))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=8, max_size=8))
def test_predictions_within_training_range(quad_model, x):
    p = predict(quad_model, np.array(x))
    assert quad_model.y_min <= p <= quad_model.y_max


def test_seed_determinism(quadratic):
    _, X, y = quadratic
    a = fit_arrays(X[:500], y[:500], seed=8, n_trees=20)
    b = fit_arrays(X[:500], y[:500], seed=8, n_trees=20)
    probe = np.random.default_rng(0).random((100, 8))
    assert np.array_equal(a.predict(probe), b.predict(probe))
    assert a.to_json() == b.to_json()


def test_unused_dimension_has_no_influence():
    rng = np.random.default_rng(6)
    X = rng.random((300, 3))
    X[:, 2] = 0.5  # constant column: never split on
    y = X[:, 0] ** 2
    m = fit_arrays(X, y, seed=1, n_trees=30)
    assert 2 not in m.used_features()
    probe = rng.random((50, 3))
    moved = probe.copy()
    moved[:, 2] = rng.normal(size=50) * 100
    assert np.array_equal(m.predict(probe), m.predict(moved))


def test_monotone_dimension():
    rng = np.random.default_rng(7)
    X = rng.random((1000, 3))
    y = 0.8 * X[:, 0] + 0.1 * X[:, 1]
    m = fit_arrays(X, y, seed=2)
    grid = np.tile(np.median(X, axis=0), (50, 1))
    grid[:, 0] = np.linspace(0, 1, 50)
    assert spearmanr(grid[:, 0], m.predict(grid)).statistic >= 0.9


def test_combine_averages(quadratic):
    _, X, y = quadratic
    a = fit_arrays(X[:600], y[:600], seed=1, n_trees=10)
    b = fit_arrays(X[600:1200], y[600:1200], seed=2, n_trees=10)
    ab = combine([a, b])
    probe = np.random.default_rng(3).random((40, 8))
    np.testing.assert_allclose(ab.predict(probe), 0.5 * (a.predict(probe) + b.predict(probe)), atol=1e-15)


def test_json_dump(quad_model):
    d = json.loads(quad_model.to_json())
    assert d["k"] == 8 and len(d["trees"]) == 100
    assert d["fingerprint"]["rows"] == 2000
