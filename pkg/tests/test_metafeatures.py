import math

import numpy as np
import pandas as pd
import pytest

from metashap.errors import ValidationError
from metashap.metafeatures import (
    SCHEMA,
    TabularDataset,
    dataset_from_frame,
    extract,
    landmark_1nn,
    landmark_majority,
    landmark_stump,
    stratified_folds,
)

LANDMARKS = ("landmark_1nn_accuracy", "landmark_stump_accuracy", "landmark_majority_accuracy")


def _blobs(rng, n=200, p=3, gap=10.0):
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(size=(n, p))
    X[:, 0] += gap * y
    return TabularDataset(X, y)


def test_schema_has_18_entries():
    assert len(SCHEMA) == 18 and len(set(SCHEMA)) == 18


def test_balanced_two_class(rng):
    ds = TabularDataset(rng.normal(size=(100, 2)), np.repeat([0, 1], 50))
    mf = extract(ds)
    assert mf["class_entropy"] == pytest.approx(math.log(2), abs=1e-12)
    assert mf["class_imbalance_ratio"] == 1.0


def _best_threshold_accuracy(x, y):
    # exhaustive scan over every cut of the sorted values, both orientations
    order = np.argsort(x)
    ys = y[order]
    best = 0.0
    for cut in range(len(x) + 1):
        left, right = ys[:cut], ys[cut:]
        for a, b in ((0, 1), (1, 0)):
            best = max(best, (np.sum(left == a) + np.sum(right == b)) / len(x))
    return best


def test_threshold_target(rng):
    X = rng.uniform(-1, 1, size=(300, 3))
    y = (X[:, 0] > 0).astype(int)
    ds = TabularDataset(X, y)
    assert _best_threshold_accuracy(X[:, 0], y) == 1.0
    mf = extract(ds)
    assert mf["landmark_stump_accuracy"] == 1.0
    assert abs(mf["max_mutual_information_with_target"] - mf["class_entropy"]) <= 0.05


def test_sonar_shape(rng):
    y = np.r_[np.zeros(97, int), np.ones(111, int)]
    mf = extract(TabularDataset(rng.normal(size=(208, 60)), y))
    assert (mf["n_instances"], mf["n_features"], mf["n_classes"]) == (208, 60, 2)


def test_1nn_duplicates(rng):
    base = rng.normal(size=(10, 3))
    labels = rng.integers(0, 2, size=10)
    labels[:2] = [0, 1]
    # 20 copies of each point: every test point keeps a twin in its training folds
    ds = TabularDataset(np.repeat(base, 20, axis=0), np.repeat(labels, 20))
    assert landmark_1nn(ds, seed=0) == 1.0


def test_1nn_random_labels():
    accs = []
    for seed in range(20):
        r = np.random.default_rng(seed)
        y = r.permutation(np.repeat([0, 1], 250))
        accs.append(landmark_1nn(TabularDataset(r.normal(size=(500, 4)), y), seed))
    assert 0.4 <= np.mean(accs) <= 0.6


def test_1nn_separated_clusters(rng):
    assert landmark_1nn(_blobs(rng), seed=3) >= 0.98


def test_stump_xor(rng):
    X = rng.uniform(-1, 1, size=(400, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    assert abs(landmark_stump(TabularDataset(X, y), seed=0) - 0.5) <= 0.1


def test_stump_constant_features():
    y = np.array([0] * 30 + [1] * 13)
    ds = TabularDataset(np.ones((43, 2)), y)
    folds = stratified_folds(y, 5)
    expected = []
    for f in np.unique(folds):
        train, test = y[folds != f], y[folds == f]
        maj = np.argmax(np.bincount(train))
        expected.append(np.mean(test == maj))
    assert landmark_stump(ds, seed=5) == pytest.approx(np.mean(expected), abs=1e-12)


def test_majority_close_to_class_frequency(rng):
    y = np.r_[np.zeros(70, int), np.ones(25, int), np.full(12, 2)]
    ds = TabularDataset(rng.normal(size=(y.size, 2)), y)
    assert abs(landmark_majority(ds, seed=1) - 70 / y.size) <= 1 / y.size


def test_deterministic(rng):
    ds = _blobs(rng, gap=1.0)
    assert extract(ds, seed=9).values == extract(ds, seed=9).values


def test_row_permutation(rng):
    ds = _blobs(rng, n=1000, gap=2.0)
    perm = rng.permutation(ds.n)
    a = extract(ds, seed=2).as_dict()
    b = extract(TabularDataset(ds.features[perm], ds.target[perm]), seed=2).as_dict()
    for name in SCHEMA:
        if name in LANDMARKS:
            assert abs(a[name] - b[name]) <= 0.05
        else:
            assert a[name] == pytest.approx(b[name], rel=1e-9, abs=1e-12)


def test_scaling_invariance(rng):
    ds = _blobs(rng, gap=1.5)
    scaled = TabularDataset(ds.features * 37.5, ds.target)
    a, b = extract(ds, seed=4), extract(scaled, seed=4)
    assert a["landmark_1nn_accuracy"] == b["landmark_1nn_accuracy"]
    for name in ("mean_feature_skewness", "mean_feature_kurtosis"):
        assert a[name] == pytest.approx(b[name], rel=1e-9, abs=1e-12)


def test_invariants_on_random_data(rng):
    X = rng.normal(size=(60, 5))
    X[rng.random(X.shape) < 0.1] = np.nan
    X[:, 4] = 3.0
    mf = extract(TabularDataset(X, np.arange(60) % 3))
    v = mf.as_dict()
    assert all(math.isfinite(x) for x in mf.values)
    assert all(0 <= v[n] <= 1 for n in LANDMARKS)
    assert v["class_entropy"] >= 0 and v["mean_feature_entropy"] >= 0
    assert v["fraction_missing"] == pytest.approx(np.isnan(X).mean())


def test_single_class_rejected():
    with pytest.raises(ValidationError):
        TabularDataset(np.zeros((5, 1)), np.zeros(5, int))


def test_frame_conversion():
    frame = pd.DataFrame(
        {"num": [1.0, 2.0, np.nan, 4.0], "color": ["r", "g", "r", "b"], "label": ["yes", "no", "yes", "no"]}
    )
    ds = dataset_from_frame(frame, "label")
    assert ds.categorical_mask.tolist() == [False, True]
    assert ds.features[:, 1].tolist() == [2.0, 1.0, 2.0, 0.0]
    assert ds.target.tolist() == [1, 0, 1, 0]
    with pytest.raises(ValidationError, match="target column"):
        dataset_from_frame(frame, "missing")
