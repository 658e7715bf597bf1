"""Regression-forest surrogate of configuration -> performance.

Trees are grown by scikit-learn's CART implementation (variance-reduction
splits) on bootstrap samples drawn here, then flattened into plain arrays.
Prediction, leaf-box extraction and the JSON dump only use those arrays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple

import numpy as np
from sklearn.tree import DecisionTreeRegressor

from metashap.errors import ValidationError
from metashap.space import (  # noqa: F401  re-exported for callers that think of encoding as surrogate plumbing
    HyperparameterSpace,
    ParamSpec,
    decode,
    encode,
)

if TYPE_CHECKING:
    from metashap.retrieval import MetaDataset

MIN_ROWS = 10
LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray  # int, LEAF at leaves
    threshold: np.ndarray  # go left when float32(x) <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def from_sklearn(cls, est: DecisionTreeRegressor) -> "Tree":
        t = est.tree_
        feature = t.feature.astype(np.int64)
        feature[t.children_left < 0] = LEAF
        return cls(
            feature=feature,
            threshold=t.threshold.astype(np.float64),
            left=t.children_left.astype(np.int64),
            right=t.children_right.astype(np.int64),
            value=t.value[:, 0, 0].astype(np.float64),
        )

    def to_dict(self) -> Dict[str, list]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    def used_features(self) -> np.ndarray:
        return np.unique(self.feature[self.feature != LEAF])

    def leaf_boxes(self, k: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-leaf (lo, hi, value); a point reaches the leaf iff lo < x32 <= hi on every dim."""
        los, his, vals = [], [], []
        stack = [(0, np.full(k, -np.inf), np.full(k, np.inf))]
        while stack:
            node, lo, hi = stack.pop()
            f = self.feature[node]
            if f == LEAF:
                los.append(lo)
                his.append(hi)
                vals.append(self.value[node])
                continue
            thr = self.threshold[node]
            lhi = hi.copy()
            lhi[f] = min(hi[f], thr)
            rlo = lo.copy()
            rlo[f] = max(lo[f], thr)
            stack.append((self.right[node], rlo, hi))
            stack.append((self.left[node], lo, lhi))
        return np.array(los), np.array(his), np.array(vals)


@dataclass
class SurrogateModel:
    trees: List[Tree]
    k: int
    y_min: float
    y_max: float
    n_rows: int
    space_hash: str
    seed: int
    holdout_r2: Optional[float]
    _flat: Optional[Tuple[np.ndarray, ...]] = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def fingerprint(self) -> Dict[str, Any]:
        return {"rows": self.n_rows, "space_hash": self.space_hash, "seed": self.seed}

    def _flatten(self) -> Tuple[np.ndarray, ...]:
        if self._flat is None:
            offsets = np.cumsum([0] + [len(t.feature) for t in self.trees[:-1]])
            feat = np.concatenate([t.feature for t in self.trees])
            thr = np.concatenate([t.threshold for t in self.trees])
            left = np.concatenate([t.left + o for t, o in zip(self.trees, offsets)])
            right = np.concatenate([t.right + o for t, o in zip(self.trees, offsets)])
            val = np.concatenate([t.value for t in self.trees])
            is_leaf = feat == LEAF
            # leaves loop onto themselves so every row can take the same number of steps
            idx = np.arange(feat.size)
            left[is_leaf] = idx[is_leaf]
            right[is_leaf] = idx[is_leaf]
            feat = np.where(is_leaf, 0, feat)
            depth = max(_tree_depth(t) for t in self.trees)
            self._flat = (offsets, feat, thr, left, right, val, depth)
        return self._flat

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Mean leaf value across trees for each row of ``X`` (shape ``(n, k)``)."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.k:
            raise ValidationError(f"expected inputs of shape (n, {self.k}), got {X.shape}")
        offsets, feat, thr, left, right, val, depth = self._flatten()
        X32 = X.astype(np.float32)
        out = np.zeros(X.shape[0])
        chunk = max(1, 2_000_000 // len(self.trees))
        rows_all = np.arange(X.shape[0])
        for s in range(0, X.shape[0], chunk):
            rows = rows_all[s : s + chunk]
            node = np.broadcast_to(offsets[:, None], (len(self.trees), rows.size)).copy()
            for _ in range(depth):
                x = X32[rows[None, :], feat[node]]
                node = np.where(x <= thr[node], left[node], right[node])
            # row-contiguous sum so a row's prediction does not depend on batch size
            out[s : s + chunk] = np.ascontiguousarray(val[node].T).sum(1) / len(self.trees)
        return np.clip(out, self.y_min, self.y_max)

    def used_features(self) -> np.ndarray:
        return np.unique(np.concatenate([t.used_features() for t in self.trees]))

    def to_json(self) -> str:
        return json.dumps(
            {
                "k": self.k,
                "y_range": [self.y_min, self.y_max],
                "fingerprint": self.fingerprint,
                "holdout_r2": self.holdout_r2,
                "trees": [t.to_dict() for t in self.trees],
            }
        )


def _tree_depth(tree: Tree) -> int:
    depth = np.zeros(len(tree.feature), dtype=int)
    for node in range(len(tree.feature)):  # sklearn numbers children after parents
        if tree.feature[node] != LEAF:
            depth[tree.left[node]] = depth[node] + 1
            depth[tree.right[node]] = depth[node] + 1
    return int(depth.max())


def predict(model: SurrogateModel, x: np.ndarray) -> float:
    """Surrogate prediction for a single encoded vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.k,):
        raise ValidationError(f"expected an encoded vector of length {model.k}, got shape {x.shape}")
    return float(model.predict(x[None, :])[0])


def r2_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """Coefficient of determination; 0 for a constant target by convention."""
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        return 0.0
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


def fit_arrays(
    X: np.ndarray,
    y: np.ndarray,
    seed: int = 42,
    n_trees: int = 100,
    *,
    min_leaf: int = 3,
    bootstrap: bool = True,
    max_features: Optional[int] = None,
    holdout_fraction: float = 0.2,
    space_hash: str = "",
) -> SurrogateModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, k = X.shape
    if n < MIN_ROWS:
        raise ValidationError(f"surrogate needs at least {MIN_ROWS} rows, got {n}")
    if n_trees < 1:
        raise ValidationError("n_trees must be >= 1")
    rng = np.random.default_rng(seed)
    n_hold = int(round(holdout_fraction * n))
    perm = rng.permutation(n)
    hold, train = np.sort(perm[:n_hold]), np.sort(perm[n_hold:])
    Xt, yt = X[train], y[train]
    max_features = math.ceil(k / 3) if max_features is None else max_features

    trees = []
    for t in range(n_trees):
        tree_rng = np.random.default_rng([seed, t])
        idx = tree_rng.integers(0, len(train), size=len(train)) if bootstrap else np.arange(len(train))
        est = DecisionTreeRegressor(
            min_samples_leaf=min_leaf,
            max_features=max_features,
            random_state=int(tree_rng.integers(0, 2**31 - 1)),
        )
        est.fit(Xt[idx], yt[idx])
        trees.append(Tree.from_sklearn(est))

    model = SurrogateModel(
        trees=trees,
        k=k,
        y_min=float(yt.min()),
        y_max=float(yt.max()),
        n_rows=n,
        space_hash=space_hash,
        seed=seed,
        holdout_r2=None,
    )
    if n_hold:
        model.holdout_r2 = r2_score(y[hold], model.predict(X[hold]))
    return model


def fit(meta: "MetaDataset", seed: int = 42, n_trees: int = 100, **kwargs) -> SurrogateModel:
    """Fit the forest surrogate on a meta-dataset (20% held out for R^2)."""
    return fit_arrays(meta.X, meta.y, seed=seed, n_trees=n_trees, space_hash=meta.space.fingerprint(), **kwargs)


def combine(models: List[SurrogateModel]) -> SurrogateModel:
    """Forest whose prediction is the average of equally sized forests."""
    sizes = {m.n_trees for m in models}
    if len(sizes) != 1 or len({m.k for m in models}) != 1:
        raise ValidationError("can only combine forests of equal size and dimension")
    return SurrogateModel(
        trees=[t for m in models for t in m.trees],
        k=models[0].k,
        y_min=min(m.y_min for m in models),
        y_max=max(m.y_max for m in models),
        n_rows=sum(m.n_rows for m in models),
        space_hash=models[0].space_hash,
        seed=models[0].seed,
        holdout_r2=None,
    )
