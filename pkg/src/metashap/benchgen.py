"""Synthetic performance surfaces with known importances, and a desk-scale KB built from them.

A surface assigns every parameter a shape function ``s_i(u)`` on its unit
coordinate, normalised so its range over the continuous domain is exactly
``[0, 1]``. The raw score is

    sum_i w_i s_i(u_i) + sum_(i,j) w_ij s_i(u_i) s_j(u_j)

with nonnegative weights, so the raw range is ``[0, sum w]`` and dividing by
that total puts every output in ``[0, 1]``. All terms peak together, which
makes the optimum available in closed form.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logit
from scipy.stats import qmc

from metashap.errors import ValidationError
from metashap.kb import KBRecord, KnowledgeBase, save_kb
from metashap.metafeatures import SCHEMA, MetaFeatureVector
from metashap.space import (
    CATEGORICAL,
    CONTINUOUS,
    INTEGER,
    HyperparameterSpace,
    ParamSpec,
    decode,
    encode,
    from_unit,
    snap_unit,
    to_unit,
)

SHAPES = ("bump", "ramp", "step")
DEFAULT_ALGORITHM = "synthetic"
GOOD_REGION_LEVEL = 0.5


@dataclass(frozen=True)
class ShapeTerm:
    """One normalised shape on the unit coordinate; ``kind="null"`` is identically 0."""

    kind: str = "null"
    center: float = 0.5
    width: float = 0.1
    increasing: bool = True

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "null":
            return np.zeros_like(u)
        if self.kind == "bump":
            return np.maximum(0.0, 1.0 - ((u - self.center) / self.width) ** 2)
        t = u if self.increasing else 1.0 - u
        if self.kind == "step":
            return (t >= self.center).astype(float)
        if self.kind == "ramp":
            s0, s1 = self._ramp_ends()
            return (expit((t - self.center) / self.width) - s0) / (s1 - s0)
        raise ValidationError(f"unknown shape {self.kind!r}")

    def _ramp_ends(self) -> Tuple[float, float]:
        return float(expit(-self.center / self.width)), float(expit((1.0 - self.center) / self.width))

    def continuous_moments(self) -> Tuple[float, float]:
        """``(E[s], E[s^2])`` for ``u ~ Uniform(0, 1)``, in closed form."""
        if self.kind == "null":
            return 0.0, 0.0
        if self.kind == "bump":
            c, h = self.center, self.width
            ta, tb = max(-1.0, -c / h), min(1.0, (1.0 - c) / h)
            m1 = h * ((tb - tb**3 / 3) - (ta - ta**3 / 3))
            m2 = h * ((tb - 2 * tb**3 / 3 + tb**5 / 5) - (ta - 2 * ta**3 / 3 + ta**5 / 5))
            return m1, m2
        if self.kind == "step":
            p = 1.0 - self.center
            return p, p
        c, h = self.center, self.width
        s0, s1 = self._ramp_ends()
        # antiderivatives: int sigma = h softplus((t-c)/h); int sigma(1-sigma) = h sigma((t-c)/h)
        e_sig = h * (np.logaddexp(0.0, (1.0 - c) / h) - np.logaddexp(0.0, -c / h))
        e_sig2 = e_sig - h * (s1 - s0)
        d = s1 - s0
        return (e_sig - s0) / d, (e_sig2 - 2 * s0 * e_sig + s0**2) / d**2

    def good_region(self, level: float) -> Tuple[float, float]:
        """Unit-coordinate interval where ``s >= level`` (the shape peaks at 1)."""
        if self.kind == "null":
            return 0.0, 1.0
        if self.kind == "bump":
            r = self.width * math.sqrt(max(0.0, 1.0 - level))
            return max(0.0, self.center - r), min(1.0, self.center + r)
        if self.kind == "step":
            lo = self.center
        else:
            s0, s1 = self._ramp_ends()
            lo = self.center + self.width * float(logit(s0 + level * (s1 - s0)))
        lo = min(max(lo, 0.0), 1.0)
        return (lo, 1.0) if self.increasing else (0.0, 1.0 - lo)

    def argmax(self) -> float:
        if self.kind == "bump":
            return self.center
        if self.kind in ("step", "ramp"):
            return 1.0 if self.increasing else 0.0
        return 0.5


def _unit_grid(p: ParamSpec) -> Optional[np.ndarray]:
    """Unit coordinates of every admissible value for discrete params, else None."""
    if p.kind == CATEGORICAL:
        n = len(p.categories)
        return np.arange(n) / (n - 1)
    if p.kind == INTEGER and not p.log_scale:
        lo, hi = math.ceil(p.bounds[0]), math.floor(p.bounds[1])
        return (np.arange(lo, hi + 1) - p.bounds[0]) / (p.bounds[1] - p.bounds[0])
    return None


@dataclass(frozen=True)
class SyntheticSurface:
    space: HyperparameterSpace
    terms: Tuple[ShapeTerm, ...]
    weights: Tuple[float, ...]
    pairs: Tuple[Tuple[int, int, float], ...] = ()
    noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        if len(self.terms) != self.space.k or len(self.weights) != self.space.k:
            raise ValidationError("one shape term and weight per parameter is required")
        if any(w < 0 for w in self.weights) or any(p[2] < 0 for p in self.pairs):
            raise ValidationError("surface weights must be nonnegative")

    @property
    def total(self) -> float:
        return float(sum(self.weights) + sum(w for _, _, w in self.pairs))

    def evaluate_unit(self, U: np.ndarray) -> np.ndarray:
        """Noiseless score in ``[0, 1]`` for unit-coordinate rows."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        S = np.column_stack([t(U[:, i]) for i, t in enumerate(self.terms)])
        raw = S @ np.asarray(self.weights)
        for i, j, w in self.pairs:
            raw = raw + w * S[:, i] * S[:, j]
        total = self.total
        return raw / total if total > 0 else np.zeros(U.shape[0])

    def __call__(self, config: Mapping[str, Any]) -> float:
        u = to_unit(encode(config, self.space), self.space)
        return float(self.evaluate_unit(u[None, :])[0])

    def relevant(self) -> List[int]:
        return [i for i, t in enumerate(self.terms) if t.kind != "null" and self.weights[i] > 0]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "space": self.space.to_list(),
            "terms": [asdict(t) for t in self.terms],
            "weights": list(self.weights),
            "pairs": [list(p) for p in self.pairs],
            "noise_sigma": self.noise_sigma,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SyntheticSurface":
        return cls(
            space=HyperparameterSpace.from_list(d["space"]),
            terms=tuple(ShapeTerm(**t) for t in d["terms"]),
            weights=tuple(float(w) for w in d["weights"]),
            pairs=tuple((int(i), int(j), float(w)) for i, j, w in d["pairs"]),
            noise_sigma=float(d.get("noise_sigma", 0.0)),
        )


class SurfaceModel:
    """Noiseless surface exposed as a model over encoded rows (anything with ``predict``)."""

    def __init__(self, surface: SyntheticSurface) -> None:
        self.surface = surface
        self.k = surface.space.k

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.surface.evaluate_unit(to_unit(np.atleast_2d(np.asarray(X, dtype=float)), self.surface.space))


@dataclass
class GroundTruth:
    variance: np.ndarray
    optimum_config: Dict[str, Any]
    optimum_value: float
    good_regions: Dict[str, Tuple[float, float]]  # unit coordinates, relevant params only
    relevant: List[str] = field(default_factory=list)

    def ranking(self, names: Sequence[str]) -> List[str]:
        order = sorted(range(len(names)), key=lambda i: (-self.variance[i], names[i]))
        return [names[i] for i in order]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variance": self.variance.tolist(),
            "optimum_config": self.optimum_config,
            "optimum_value": self.optimum_value,
            "good_regions": {k: list(v) for k, v in self.good_regions.items()},
            "relevant": list(self.relevant),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GroundTruth":
        return cls(
            np.asarray(d["variance"], dtype=float),
            dict(d["optimum_config"]),
            float(d["optimum_value"]),
            {k: (float(v[0]), float(v[1])) for k, v in d["good_regions"].items()},
            list(d["relevant"]),
        )


# ------------------------------------------------------------ ground truth


def term_moments(surface: SyntheticSurface, i: int, n_mc: int = 0, seed: int = 0) -> Tuple[float, float]:
    """Moments of ``s_i`` under uniform sampling of parameter ``i``.

    Discrete parameters are averaged over their grid exactly; continuous ones use
    the closed form, or ``n_mc`` uniform draws when ``n_mc > 0``.
    """
    term, p = surface.terms[i], surface.space.params[i]
    grid = _unit_grid(p)
    if grid is not None:
        s = term(grid)
        return float(s.mean()), float((s * s).mean())
    if n_mc:
        s = term(np.random.default_rng([seed, i]).random(n_mc))
        return float(s.mean()), float((s * s).mean())
    return term.continuous_moments()


def variance_contributions(surface: SyntheticSurface, n_mc: int = 0, seed: int = 0) -> np.ndarray:
    """Per-parameter variance share of the rescaled surface under uniform sampling.

    Each parameter gets its main-effect variance plus half of every pairwise
    interaction variance it takes part in.
    """
    k = surface.space.k
    mom = [term_moments(surface, i, n_mc, seed) for i in range(k)]
    mean = np.array([m[0] for m in mom])
    var = np.array([max(m[1] - m[0] ** 2, 0.0) for m in mom])
    slope = np.array(surface.weights, dtype=float)
    for i, j, w in surface.pairs:
        slope[i] += w * mean[j]
        slope[j] += w * mean[i]
    out = slope**2 * var
    for i, j, w in surface.pairs:
        pure = w**2 * var[i] * var[j]
        out[i] += 0.5 * pure
        out[j] += 0.5 * pure
    total = surface.total
    return out / total**2 if total > 0 else out


def ground_truth(surface: SyntheticSurface) -> GroundTruth:
    space = surface.space
    u_opt = np.empty(space.k)
    regions: Dict[str, Tuple[float, float]] = {}
    relevant = surface.relevant()
    defaults = to_unit(encode(space.default_config(), space), space)
    for i, (term, p) in enumerate(zip(surface.terms, space.params)):
        grid = _unit_grid(p)
        if i not in relevant:
            u_opt[i] = defaults[i]
            continue
        if grid is None:
            u_opt[i] = term.argmax()
            peak = 1.0
        else:
            s = term(grid)
            u_opt[i] = grid[int(np.argmax(s))]
            peak = float(s.max())
        regions[p.name] = term.good_region(GOOD_REGION_LEVEL * peak)
    u_opt = snap_unit(u_opt, space)[0]
    config = decode(from_unit(u_opt, space), space)
    return GroundTruth(
        variance_contributions(surface),
        config,
        surface(config),
        regions,
        [space.params[i].name for i in relevant],
    )


# ----------------------------------------------------------------- surfaces


def default_space(k: int) -> HyperparameterSpace:
    """Mixed space cycling plain continuous, log-scaled continuous and integer parameters."""
    params = []
    for i in range(k):
        if i % 3 == 0:
            params.append(ParamSpec(f"x{i}", CONTINUOUS, (0.0, 1.0), default=0.5))
        elif i % 3 == 1:
            params.append(ParamSpec(f"x{i}", CONTINUOUS, (1e-3, 10.0), default=0.1, log_scale=True))
        else:
            params.append(ParamSpec(f"x{i}", INTEGER, (1, 64), default=32))
    return HyperparameterSpace(tuple(params))


def _random_term(rng: np.random.Generator, kind: Optional[str] = None) -> ShapeTerm:
    draw = SHAPES[int(rng.integers(len(SHAPES)))]
    kind = kind or draw
    if kind == "bump":
        return ShapeTerm("bump", float(rng.uniform(0.25, 0.75)), float(rng.uniform(0.15, 0.3)))
    if kind == "ramp":
        return ShapeTerm("ramp", float(rng.uniform(0.3, 0.7)), float(rng.uniform(0.05, 0.12)), bool(rng.random() < 0.5))
    return ShapeTerm("step", float(rng.uniform(0.3, 0.7)), 0.1, bool(rng.random() < 0.5))


def make_surface(
    k: int,
    n_relevant: int,
    interaction_pairs: int = 0,
    noise_sigma: float = 0.0,
    seed: int = 0,
    space: Optional[HyperparameterSpace] = None,
    relevant: Optional[Sequence[int]] = None,
    shapes: Optional[Sequence[str]] = None,
) -> Tuple[SyntheticSurface, GroundTruth]:
    """Random surface with ``n_relevant`` active parameters and weights 1, 1/2, 1/4, ...

    ``shapes`` forces the shape of each relevant term (in ``relevant`` order).
    """
    if not 1 <= n_relevant <= k:
        raise ValidationError(f"need 1 <= n_relevant <= k, got n_relevant={n_relevant}, k={k}")
    if not 0 <= interaction_pairs <= n_relevant * (n_relevant - 1) // 2:
        raise ValidationError(f"at most {n_relevant * (n_relevant - 1) // 2} interaction pairs for {n_relevant} relevant params")
    space = space or default_space(k)
    if space.k != k:
        raise ValidationError("space size does not match k")
    rng = np.random.default_rng(seed)
    rel = list(relevant) if relevant is not None else [int(i) for i in rng.choice(k, n_relevant, replace=False)]
    if len(rel) != n_relevant:
        raise ValidationError("relevant list must have n_relevant entries")
    terms = [ShapeTerm()] * k
    weights = [0.0] * k
    if shapes is not None and (len(shapes) != n_relevant or set(shapes) - set(SHAPES)):
        raise ValidationError(f"shapes must list {n_relevant} entries from {SHAPES}")
    for rank, i in enumerate(rel):
        terms[i] = _random_term(rng, shapes[rank] if shapes is not None else None)
        weights[i] = 0.5**rank
    all_pairs = [(rel[a], rel[b]) for a in range(len(rel)) for b in range(a + 1, len(rel))]
    chosen = rng.choice(len(all_pairs), interaction_pairs, replace=False) if interaction_pairs else []
    pairs = tuple(
        (min(all_pairs[c]), max(all_pairs[c]), 0.5 * math.sqrt(weights[all_pairs[c][0]] * weights[all_pairs[c][1]]))
        for c in sorted(int(c) for c in chosen)
    )
    surface = SyntheticSurface(space, tuple(terms), tuple(weights), pairs, noise_sigma)
    return surface, ground_truth(surface)


def perturb_weights(surface: SyntheticSurface, rng: np.random.Generator, spread: float = 0.1) -> SyntheticSurface:
    """Same shapes and relevance structure, weights scaled by ``U(1 - spread, 1 + spread)``."""
    w = tuple(float(x * rng.uniform(1 - spread, 1 + spread)) for x in surface.weights)
    pairs = tuple((i, j, float(x * rng.uniform(1 - spread, 1 + spread))) for i, j, x in surface.pairs)
    return SyntheticSurface(surface.space, surface.terms, w, pairs, surface.noise_sigma)


# ------------------------------------------------------------ meta-features

# Prototype meta-feature vectors shaped after common benchmark datasets
# (instances/features/classes as published; remaining entries are plausible values).
ARCHETYPES: Dict[str, Tuple[float, ...]] = {
    "sonar": (208, 60, 2, math.log(208 / 60), 0.691, 1.14, 0.28, 0.14, 0.95, 1.6, 1.85, 0.09, 0.21, 0.0, 0.0, 0.86, 0.71, 0.53),
    "adult": (48842, 14, 2, math.log(48842 / 14), 0.552, 3.18, 4.1e4, 2.2e4, 2.9, 31.0, 0.82, 0.07, 0.17, 0.57, 0.009, 0.79, 0.75, 0.76),
    "ring": (7400, 20, 2, math.log(7400 / 20), 0.693, 1.02, 0.01, 1.21, 0.04, 0.35, 1.62, 0.02, 0.05, 0.0, 0.0, 0.75, 0.59, 0.50),
    "titanic": (2207, 8, 2, math.log(2207 / 8), 0.628, 2.1, 1.9, 0.7, 0.6, -0.9, 0.95, 0.05, 0.14, 0.38, 0.0, 0.77, 0.78, 0.68),
    "shuttle": (58000, 9, 7, math.log(58000 / 9), 0.675, 4558.0, 40.2, 21.0, -0.4, 12.5, 1.1, 0.31, 0.62, 0.0, 0.0, 0.999, 0.93, 0.79),
    "cars": (392, 8, 3, math.log(392 / 8), 0.931, 3.97, 490.0, 180.0, 0.45, -0.6, 1.92, 0.36, 0.71, 0.13, 0.0, 0.91, 0.74, 0.63),
}
_COUNT_FIELDS = {"n_features", "n_classes"}
_UNIT_FIELDS = {"fraction_categorical", "fraction_missing", "landmark_1nn_accuracy", "landmark_stump_accuracy", "landmark_majority_accuracy"}


def synthesize_meta_features(archetype: Sequence[float], rng: np.random.Generator, rel_noise: float = 0.01) -> MetaFeatureVector:
    """Archetype vector with small multiplicative noise; counts stay exact, ratios stay valid."""
    vals = []
    for name, v in zip(SCHEMA, archetype):
        if name in _COUNT_FIELDS:
            vals.append(float(v))
            continue
        x = float(v) * (1.0 + rel_noise * rng.standard_normal())
        if name == "n_instances":
            x = float(max(2, round(x)))
        if name in _UNIT_FIELDS:
            x = min(max(x, 0.0), 1.0)
        if name in ("class_entropy", "mean_feature_entropy", "mean_mutual_information_with_target", "max_mutual_information_with_target", "mean_of_feature_stds"):
            x = max(x, 0.0)
        if name == "class_imbalance_ratio":
            x = max(x, 1.0)
        vals.append(x)
    d = dict(zip(SCHEMA, vals))
    d["log_instances_per_feature"] = math.log(d["n_instances"] / d["n_features"])
    return MetaFeatureVector(tuple(d[n] for n in SCHEMA))


# ---------------------------------------------------------------------- KB


@dataclass
class SyntheticKB:
    kb: KnowledgeBase
    surfaces: Dict[str, SyntheticSurface]
    truths: Dict[str, GroundTruth]
    clusters: Dict[str, int]
    emission_log: Dict[str, int]
    algorithm_id: str = DEFAULT_ALGORITHM

    def save(self, path: os.PathLike) -> None:
        root = Path(path)
        save_kb(self.kb, root)
        with open(root / "ground_truth.json", "w") as fh:
            json.dump(
                {
                    "algorithm_id": self.algorithm_id,
                    "clusters": self.clusters,
                    "emission_log": self.emission_log,
                    "datasets": {d: t.to_dict() for d, t in sorted(self.truths.items())},
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
        with open(root / "surfaces.json", "w") as fh:
            json.dump({d: s.to_dict() for d, s in sorted(self.surfaces.items())}, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_surfaces(path: os.PathLike) -> Dict[str, SyntheticSurface]:
    with open(path) as fh:
        return {d: SyntheticSurface.from_dict(s) for d, s in json.load(fh).items()}


def load_ground_truth(path: os.PathLike) -> Dict[str, GroundTruth]:
    with open(path) as fh:
        return {d: GroundTruth.from_dict(t) for d, t in json.load(fh)["datasets"].items()}


def lhs_configs(space: HyperparameterSpace, n: int, rng: np.random.Generator) -> List[Dict[str, Any]]:
    """Latin-hypercube configurations snapped onto the space's grid."""
    U = qmc.LatinHypercube(d=space.k, seed=rng).random(n)
    U = snap_unit(U, space)
    enc = from_unit(U, space)
    return [decode(row, space) for row in enc]


def generate_kb(
    n_datasets: int = 10,
    configs_per_dataset: int = 400,
    surface_family_seed: int = 0,
    *,
    k: int = 8,
    n_relevant: int = 3,
    interaction_pairs: int = 0,
    n_clusters: int = 2,
    noise_sigma: float = 0.01,
    algorithm_id: str = DEFAULT_ALGORITHM,
) -> SyntheticKB:
    """Clustered datasets: same-cluster surfaces share shapes and relevant params, weights differ."""
    if n_datasets < 2:
        raise ValidationError("need at least 2 datasets")
    if not 1 <= n_clusters <= len(ARCHETYPES):
        raise ValidationError(f"n_clusters must be in 1..{len(ARCHETYPES)}")
    space = default_space(k)
    rng = np.random.default_rng(surface_family_seed)
    bases: List[SyntheticSurface] = []
    used: List[frozenset] = []
    for c in range(n_clusters):
        for attempt in range(50):
            surf, _ = make_surface(k, n_relevant, interaction_pairs, noise_sigma, seed=int(rng.integers(2**31)), space=space)
            rel = frozenset(surf.relevant())
            if rel not in used or attempt == 49:
                break
        used.append(rel)
        bases.append(surf)
    archetypes = list(ARCHETYPES.values())

    records: List[KBRecord] = []
    registry: Dict[str, MetaFeatureVector] = {}
    surfaces: Dict[str, SyntheticSurface] = {}
    truths: Dict[str, GroundTruth] = {}
    clusters: Dict[str, int] = {}
    log: Dict[str, int] = {}
    for d in range(n_datasets):
        did = f"d{d:02d}"
        c = d % n_clusters
        drng = np.random.default_rng([surface_family_seed, d])
        surf = perturb_weights(bases[c], drng)
        surfaces[did], truths[did], clusters[did] = surf, ground_truth(surf), c
        registry[did] = synthesize_meta_features(archetypes[c], drng)
        configs = lhs_configs(space, configs_per_dataset, drng)
        U = to_unit(np.array([encode(cfg, space) for cfg in configs]), space)
        perf = np.clip(surf.evaluate_unit(U) + noise_sigma * drng.standard_normal(len(configs)), 0.0, 1.0)
        records.extend(KBRecord(did, algorithm_id, cfg, float(y)) for cfg, y in zip(configs, perf))
        log[did] = len(configs)
    kb = KnowledgeBase(tuple(records), registry, {algorithm_id: space}, "accuracy")
    return SyntheticKB(kb, surfaces, truths, clusters, log, algorithm_id)
