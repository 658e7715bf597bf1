"""Dataset meta-features: general, statistical, information-theoretic, landmarking.

Every dataset is summarised by the same 18 numbers (``SCHEMA``). Landmarkers
(1-NN, decision stump, majority vote) are scored by stratified 5-fold
cross-validation whose fold assignment is driven by ``seed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from metashap.errors import ValidationError

SCHEMA_VERSION = "metafeatures/v1"
SCHEMA: Tuple[str, ...] = (
    "n_instances",
    "n_features",
    "n_classes",
    "log_instances_per_feature",
    "class_entropy",
    "class_imbalance_ratio",
    "mean_of_feature_means",
    "mean_of_feature_stds",
    "mean_feature_skewness",
    "mean_feature_kurtosis",
    "mean_feature_entropy",
    "mean_mutual_information_with_target",
    "max_mutual_information_with_target",
    "fraction_categorical",
    "fraction_missing",
    "landmark_1nn_accuracy",
    "landmark_stump_accuracy",
    "landmark_majority_accuracy",
)
N_BINS = 10
N_FOLDS = 5


@dataclass(frozen=True)
class MetaFeatureVector:
    values: Tuple[float, ...]

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        if len(vals) != len(SCHEMA):
            raise ValidationError(f"meta-feature vector needs {len(SCHEMA)} entries, got {len(vals)}")
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError("meta-feature entries must be finite")
        object.__setattr__(self, "values", vals)

    def __getitem__(self, name: str) -> float:
        return self.values[SCHEMA.index(name)]

    def as_array(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def as_dict(self) -> dict:
        return dict(zip(SCHEMA, self.values))


@dataclass
class TabularDataset:
    """Numeric feature matrix (categoricals ordinal-encoded), integer labels 0..c-1."""

    features: np.ndarray
    target: np.ndarray
    categorical_mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.target)
        if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
            raise ValidationError(f"need at least 2 rows and 1 feature, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValidationError("target length must match the number of rows")
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValidationError("target labels must be integers")
        y = y.astype(int)
        c = int(y.max()) + 1 if y.size else 0
        if y.min() < 0 or np.any(np.bincount(y, minlength=c) == 0):
            raise ValidationError("labels must be 0..c-1 with every class present")
        if c < 2:
            raise ValidationError("dataset has a single class; at least 2 are required")
        mask = np.zeros(X.shape[1], dtype=bool) if self.categorical_mask is None else np.asarray(self.categorical_mask, dtype=bool)
        if mask.shape != (X.shape[1],):
            raise ValidationError("categorical_mask length must equal the number of features")
        self.features, self.target, self.categorical_mask = X, y, mask

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return int(self.target.max()) + 1


# ---------------------------------------------------------------- helpers


def _entropy_from_counts(counts: np.ndarray) -> float:
    counts = np.asarray(counts, dtype=float)
    counts = counts[counts > 0]
    if counts.size == 0:
        return 0.0
    p = counts / counts.sum()
    return float(-(p * np.log(p)).sum())


def _impute(X: np.ndarray) -> np.ndarray:
    X = X.copy()
    for j in range(X.shape[1]):
        col = X[:, j]
        nan = np.isnan(col)
        if nan.any():
            med = np.median(col[~nan]) if (~nan).any() else 0.0
            col[nan] = med
    return X


def _discretize(col: np.ndarray, categorical: bool) -> np.ndarray:
    """Equal-width 10-bin codes for numeric columns; category codes otherwise."""
    if categorical:
        _, codes = np.unique(col, return_inverse=True)
        return codes
    lo, hi = col.min(), col.max()
    if hi <= lo:
        return np.zeros(col.shape[0], dtype=int)
    codes = np.floor((col - lo) / (hi - lo) * N_BINS).astype(int)
    return np.clip(codes, 0, N_BINS - 1)


def _mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """MI in nats between two integer-coded vectors."""
    _, a = np.unique(a, return_inverse=True)
    _, b = np.unique(b, return_inverse=True)
    joint = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(joint, (a, b), 1.0)
    mi = _entropy_from_counts(joint.sum(1)) + _entropy_from_counts(joint.sum(0)) - _entropy_from_counts(joint.ravel())
    return max(mi, 0.0)


def stratified_folds(y: np.ndarray, seed: int, n_folds: int = N_FOLDS) -> np.ndarray:
    """Fold id per row. Each class is shuffled and dealt round-robin across folds."""
    y = np.asarray(y)
    n_folds = min(n_folds, y.shape[0])
    rng = np.random.default_rng(seed)
    folds = np.empty(y.shape[0], dtype=int)
    offset = 0
    for label in np.unique(y):
        idx = np.flatnonzero(y == label)
        idx = idx[rng.permutation(idx.size)]
        folds[idx] = (offset + np.arange(idx.size)) % n_folds
        offset += idx.size
    return folds


def _cv_accuracy(ds: TabularDataset, seed: int, fit_predict) -> float:
    X = _impute(ds.features)
    folds = stratified_folds(ds.target, seed)
    accs = []
    for f in np.unique(folds):
        test = folds == f
        train = ~test
        pred = fit_predict(X[train], ds.target[train], X[test])
        accs.append(float(np.mean(pred == ds.target[test])))
    return float(np.mean(accs))


def _majority_label(y: np.ndarray) -> int:
    return int(np.argmax(np.bincount(y)))


def _nn_fit_predict(X_train: np.ndarray, y_train: np.ndarray, X_test: np.ndarray) -> np.ndarray:
    mu = X_train.mean(0)
    sd = X_train.std(0)
    sd[sd == 0] = 1.0
    A = (X_train - mu) / sd
    B = (X_test - mu) / sd
    a2 = (A * A).sum(1)
    out = np.empty(B.shape[0], dtype=int)
    chunk = max(1, 2_000_000 // max(A.shape[0], 1))
    for s in range(0, B.shape[0], chunk):
        b = B[s : s + chunk]
        d2 = a2[None, :] - 2.0 * b @ A.T + (b * b).sum(1)[:, None]
        # argmin returns the first minimum, i.e. the lowest training row index
        out[s : s + chunk] = y_train[np.argmin(d2, axis=1)]
    return out


def _best_stump(X: np.ndarray, y: np.ndarray) -> Optional[Tuple[int, float, int, int]]:
    """Return (feature, threshold, left_label, right_label) maximising information gain."""
    n, c = y.shape[0], int(y.max()) + 1
    onehot = np.eye(c)[y]
    parent = _entropy_from_counts(onehot.sum(0))
    best_gain, best = 1e-12, None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cum = np.cumsum(onehot[order], axis=0)
        cut = np.flatnonzero(xs[1:] > xs[:-1])  # split after position cut
        if cut.size == 0:
            continue
        left = cum[cut]
        right = cum[-1] - left
        nl = left.sum(1)
        nr = right.sum(1)
        with np.errstate(divide="ignore", invalid="ignore"):
            pl = left / nl[:, None]
            pr = right / nr[:, None]
            hl = -np.where(pl > 0, pl * np.log(pl), 0.0).sum(1)
            hr = -np.where(pr > 0, pr * np.log(pr), 0.0).sum(1)
        gain = parent - (nl * hl + nr * hr) / n
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = float(gain[i])
            thr = 0.5 * (xs[cut[i]] + xs[cut[i] + 1])
            best = (j, float(thr), int(np.argmax(left[i])), int(np.argmax(right[i])))
    return best


def _stump_fit_predict(X_train: np.ndarray, y_train: np.ndarray, X_test: np.ndarray) -> np.ndarray:
    stump = _best_stump(X_train, y_train)
    if stump is None:
        return np.full(X_test.shape[0], _majority_label(y_train))
    j, thr, left, right = stump
    return np.where(X_test[:, j] <= thr, left, right)


def _majority_fit_predict(X_train: np.ndarray, y_train: np.ndarray, X_test: np.ndarray) -> np.ndarray:
    return np.full(X_test.shape[0], _majority_label(y_train))


# ------------------------------------------------------------- landmarkers


def landmark_1nn(ds: TabularDataset, seed: int) -> float:
    """Stratified 5-fold accuracy of 1-NN on z-scored features."""
    return _cv_accuracy(ds, seed, _nn_fit_predict)


def landmark_stump(ds: TabularDataset, seed: int) -> float:
    """Stratified 5-fold accuracy of an information-gain decision stump."""
    return _cv_accuracy(ds, seed, _stump_fit_predict)


def landmark_majority(ds: TabularDataset, seed: int) -> float:
    return _cv_accuracy(ds, seed, _majority_fit_predict)


# ----------------------------------------------------------------- extract


def extract(ds: TabularDataset, seed: int = 42) -> MetaFeatureVector:
    """Compute the 18-entry meta-feature vector of ``ds``."""
    n, p, c = ds.n, ds.p, ds.n_classes
    fraction_missing = float(np.isnan(ds.features).sum()) / (n * p)
    X = _impute(ds.features)
    y = ds.target
    counts = np.bincount(y, minlength=c)

    numeric = ~ds.categorical_mask
    means, stds, skews, kurts = [], [], [], []
    for j in np.flatnonzero(numeric):
        col = X[:, j]
        sd = col.std()
        means.append(col.mean())
        stds.append(sd)
        if sd > 0:
            skews.append(float(stats.skew(col)))
            kurts.append(float(stats.kurtosis(col)))
        else:
            skews.append(0.0)
            kurts.append(0.0)

    codes = [_discretize(X[:, j], bool(ds.categorical_mask[j])) for j in range(p)]
    feat_entropy = [_entropy_from_counts(np.bincount(code)) for code in codes]
    mi = [_mutual_information(code, y) for code in codes]

    def _mean(xs: Sequence[float]) -> float:
        return float(np.mean(xs)) if len(xs) else 0.0

    values = [
        float(n),
        float(p),
        float(c),
        math.log(n / p),
        _entropy_from_counts(counts),
        float(counts.max() / counts.min()),
        _mean(means),
        _mean(stds),
        _mean(skews),
        _mean(kurts),
        _mean(feat_entropy),
        _mean(mi),
        float(max(mi)),
        float(ds.categorical_mask.mean()),
        fraction_missing,
        landmark_1nn(ds, seed),
        landmark_stump(ds, seed),
        landmark_majority(ds, seed),
    ]
    return MetaFeatureVector(tuple(values))


def dataset_from_frame(frame, target_col: str, categorical: Optional[Iterable[str]] = None) -> TabularDataset:
    """Build a :class:`TabularDataset` from a pandas frame.

    Non-numeric columns are treated as categorical and ordinal-encoded by
    sorted label; ``categorical`` forces additional columns.
    """
    import pandas as pd

    if target_col not in frame.columns:
        raise ValidationError(f"target column {target_col!r} not found; columns are {list(frame.columns)}")
    forced = set(categorical or ())
    unknown = forced - set(frame.columns)
    if unknown:
        raise ValidationError(f"categorical columns not found: {sorted(unknown)}")
    _, y = np.unique(frame[target_col].astype(str).to_numpy(), return_inverse=True)
    cols: List[np.ndarray] = []
    mask: List[bool] = []
    for name in frame.columns:
        if name == target_col:
            continue
        col = frame[name]
        numeric = pd.to_numeric(col, errors="coerce")
        is_cat = name in forced or bool((numeric.isna() & col.notna()).any())
        if is_cat:
            present = col.notna()
            labels = col[present].astype(str).to_numpy()
            _, inv = np.unique(labels, return_inverse=True)
            enc = np.full(len(col), np.nan)
            enc[present.to_numpy()] = inv
            cols.append(enc)
        else:
            cols.append(numeric.to_numpy(dtype=float))
        mask.append(is_cat)
    if not cols:
        raise ValidationError("dataset has no feature columns")
    return TabularDataset(np.column_stack(cols), y, np.array(mask))
