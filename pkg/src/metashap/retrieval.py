"""Nearest datasets in meta-feature space and the pooled surrogate training set."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple

import numpy as np

from metashap.errors import ValidationError
from metashap.kb import KnowledgeBase, query
from metashap.metafeatures import MetaFeatureVector
from metashap.space import HyperparameterSpace, encode

DEFAULT_K_NEIGHBORS = 5


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray  # 0 marks a degenerate dimension

    def apply(self, x: np.ndarray) -> np.ndarray:
        safe = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (np.asarray(x, dtype=float) - self.mean) / safe, 0.0)


@dataclass(frozen=True)
class Neighborhood:
    entries: Tuple[Tuple[str, float], ...]
    query: MetaFeatureVector
    k_neighbors: int

    @property
    def dataset_ids(self) -> List[str]:
        return [d for d, _ in self.entries]


@dataclass
class MetaDataset:
    X: np.ndarray
    y: np.ndarray
    space: HyperparameterSpace
    source_dataset_ids: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float).reshape(-1, self.space.k)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValidationError("rows and performances differ in length")
        if self.y.size and (self.y.min() < 0 or self.y.max() > 1):
            raise ValidationError("performances must lie in [0, 1]")

    @property
    def rows(self) -> List[Tuple[np.ndarray, float]]:
        return list(zip(self.X, self.y))

    def __len__(self) -> int:
        return self.y.shape[0]


def normalize(registry: Mapping[str, MetaFeatureVector]) -> Tuple[Dict[str, np.ndarray], NormStats]:
    """Z-score every dimension with registry-wide statistics."""
    if not registry:
        raise ValidationError("cannot normalise an empty registry")
    ids = sorted(registry)
    M = np.array([registry[i].values for i in ids])
    mean = M.mean(0)
    std = M.std(0)
    # relative floor: spreads at rounding level are treated as constant dimensions
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 0.0)
    stats = NormStats(mean, std)
    Z = stats.apply(M)
    return {i: Z[r] for r, i in enumerate(ids)}, stats


def knn(
    query_vec: MetaFeatureVector,
    registry: Mapping[str, MetaFeatureVector],
    stats: Optional[NormStats] = None,
    k_neighbors: int = DEFAULT_K_NEIGHBORS,
    exclude: Optional[str] = None,
) -> Neighborhood:
    """Top-k datasets by Euclidean distance in normalised meta-feature space.

    ``exclude`` drops one dataset id before ranking (leave-one-out use).
    """
    if k_neighbors < 1:
        raise ValidationError("k_neighbors must be >= 1")
    if not registry:
        raise ValidationError("registry is empty")
    if stats is None:
        _, stats = normalize(registry)
    ids = sorted(i for i in registry if i != exclude)
    if not ids:
        raise ValidationError("registry is empty after excluding the query dataset")
    q = stats.apply(query_vec.as_array())
    Z = stats.apply(np.array([registry[i].values for i in ids]))
    dist = np.sqrt(((Z - q) ** 2).sum(1))
    order = sorted(range(len(ids)), key=lambda r: (dist[r], ids[r]))
    entries = tuple((ids[r], float(dist[r])) for r in order[:k_neighbors])
    return Neighborhood(entries, query_vec, k_neighbors)


def build_meta_dataset(kb: KnowledgeBase, nbhd: Neighborhood, algorithm_id: str) -> MetaDataset:
    """Encoded configurations and performances of all neighbor records, in KB order."""
    records = query(kb, algorithm_id, nbhd.dataset_ids)
    if not records:
        raise ValidationError(
            f"no {algorithm_id!r} records among neighbors {nbhd.dataset_ids}; increase k_neighbors"
        )
    space = kb.spaces[algorithm_id]
    X = np.array([encode(r.config, space) for r in records])
    y = np.array([r.performance for r in records])
    return MetaDataset(X, y, space, frozenset(r.dataset_id for r in records))
