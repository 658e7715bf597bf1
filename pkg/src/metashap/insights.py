"""Turn per-sample attributions into a tuning report: ranking, intervals, fixed defaults."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from metashap.attribution import AttributionResult, InteractionMatrix
from metashap.errors import ValidationError
from metashap.space import CATEGORICAL, INTEGER, HyperparameterSpace, ParamSpec

MIN_SAMPLES = 20
REPORT_SCHEMA_VERSION = "report/v1"
HIGHLIGHT_FRACTION = 0.25
MIN_INTERACTION = 1e-3


@dataclass(frozen=True)
class TuningRange:
    param_name: str
    intervals: Tuple[Tuple[float, float], ...]
    peak_smoothed_shap: float
    support: int
    categories: Optional[Tuple[Any, ...]] = None  # categorical params only
    fallback: bool = False  # intervals replaced by the full bounds

    def to_dict(self) -> Dict[str, Any]:
        d = {
            "param": self.param_name,
            "intervals": [list(iv) for iv in self.intervals],
            "peak": self.peak_smoothed_shap,
            "support": self.support,
            "fallback": self.fallback,
        }
        if self.categories is not None:
            d["categories"] = list(self.categories)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TuningRange":
        cats = d.get("categories")
        return cls(
            d["param"],
            tuple((float(a), float(b)) for a, b in d["intervals"]),
            float(d["peak"]),
            int(d["support"]),
            tuple(cats) if cats is not None else None,
            bool(d.get("fallback", False)),
        )


@dataclass(frozen=True)
class TuningReport:
    ranking: Tuple[Tuple[str, float], ...]
    selected: Tuple[str, ...]
    ranges: Tuple[TuningRange, ...]
    fixed: Mapping[str, Any]
    interaction_highlights: Tuple[Tuple[Tuple[str, str], float], ...]
    surrogate_r2: Optional[float]
    algorithm: str = ""
    dataset: str = ""
    warm_start: Optional[Mapping[str, Any]] = None
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def range_for(self, name: str) -> TuningRange:
        for r in self.ranges:
            if r.param_name == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "algorithm": self.algorithm,
            "dataset": self.dataset,
            "ranking": [[n, v] for n, v in self.ranking],
            "selected": list(self.selected),
            "ranges": [r.to_dict() for r in self.ranges],
            "fixed": dict(self.fixed),
            "interactions": [{"pair": list(p), "value": v} for p, v in self.interaction_highlights],
            "surrogate_r2": self.surrogate_r2,
            "warm_start": dict(self.warm_start) if self.warm_start is not None else None,
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TuningReport":
        return cls(
            ranking=tuple((n, float(v)) for n, v in d["ranking"]),
            selected=tuple(d["selected"]),
            ranges=tuple(TuningRange.from_dict(r) for r in d["ranges"]),
            fixed=dict(d["fixed"]),
            interaction_highlights=tuple((tuple(h["pair"]), float(h["value"])) for h in d["interactions"]),
            surrogate_r2=d["surrogate_r2"],
            algorithm=d.get("algorithm", ""),
            dataset=d.get("dataset", ""),
            warm_start=d.get("warm_start"),
            provenance=d.get("provenance", {}),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TuningReport":
        return cls.from_dict(json.loads(text))


# ------------------------------------------------------------------ ranges


def smoothing_window(n: int, window_fraction: float) -> int:
    return max(5, math.ceil(window_fraction * n))


def moving_average(y: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; windows shrink at the ends instead of padding."""
    n = y.size
    left, right = (window - 1) // 2, window // 2
    idx = np.arange(n)
    lo = np.maximum(idx - left, 0)
    hi = np.minimum(idx + right, n - 1)
    c = np.concatenate(([0.0], np.cumsum(y)))
    return (c[hi + 1] - c[lo]) / (hi - lo + 1)


def smooth_shap(values: Sequence[float], phi: Sequence[float], window_fraction: float = 0.05):
    """Sort samples by value and smooth their SHAP values. Returns (values, phi, smoothed)."""
    v = np.asarray(values, dtype=float)
    p = np.asarray(phi, dtype=float)
    if v.shape != p.shape or v.ndim != 1:
        raise ValidationError("values and phi must be 1-d and of equal length")
    order = np.argsort(v, kind="stable")
    v, p = v[order], p[order]
    return v, p, moving_average(p, smoothing_window(v.size, window_fraction))


def _mid(a: float, b: float, log_scale: bool) -> float:
    if log_scale and a > 0 and b > 0:
        return math.sqrt(a * b)
    return 0.5 * (a + b)


def extract_ranges(
    values: Sequence[float],
    phi: Sequence[float],
    window_fraction: float = 0.05,
    tau: float = 0.5,
    *,
    param_name: str = "",
    log_scale: bool = False,
) -> TuningRange:
    """Value intervals where smoothed SHAP is positive and at least ``tau`` times its peak.

    Interval ends sit halfway between the last sample inside a run and the first
    one outside (geometric midpoint when ``log_scale``). Runs closer than one
    smoothing window are merged.
    """
    if len(values) < MIN_SAMPLES:
        raise ValidationError(f"need at least {MIN_SAMPLES} samples to extract a range, got {len(values)}")
    if not 0.0 < tau <= 1.0:
        raise ValidationError("tau must lie in (0, 1]")
    v, _, sm = smooth_shap(values, phi, window_fraction)
    n = v.size
    window = smoothing_window(n, window_fraction)
    peak = float(sm.max())
    if peak <= 0:
        return TuningRange(param_name, (), peak, 0)

    keep = (sm >= tau * peak) & (sm > 0)
    edges = np.flatnonzero(np.diff(np.concatenate(([0], keep.astype(int), [0]))))
    runs = [[int(a), int(b) - 1] for a, b in zip(edges[::2], edges[1::2])]
    merged = [runs[0]]
    for a, b in runs[1:]:
        if a - merged[-1][1] - 1 < window:
            merged[-1][1] = b
        else:
            merged.append([a, b])

    intervals: List[List[float]] = []
    for a, b in merged:
        lo = _mid(v[a - 1], v[a], log_scale) if a > 0 else v[a]
        hi = _mid(v[b], v[b + 1], log_scale) if b < n - 1 else v[b]
        if intervals and lo <= intervals[-1][1]:
            intervals[-1][1] = max(intervals[-1][1], hi)
        else:
            intervals.append([lo, hi])
    intervals = [iv for iv in intervals if iv[0] < iv[1]]
    support = int(sum(np.count_nonzero((v >= lo) & (v <= hi)) for lo, hi in intervals))
    return TuningRange(param_name, tuple((float(lo), float(hi)) for lo, hi in intervals), peak, support)


def extract_categories(
    indices: Sequence[int], phi: Sequence[float], categories: Sequence[Any], tau: float = 0.5, param_name: str = ""
) -> TuningRange:
    """Categories whose mean SHAP is positive and at least ``tau`` times the best mean."""
    idx = np.asarray(indices, dtype=int)
    p = np.asarray(phi, dtype=float)
    means = np.array([p[idx == c].mean() if np.any(idx == c) else -np.inf for c in range(len(categories))])
    peak = float(means.max())
    if not np.isfinite(peak) or peak <= 0:
        return TuningRange(param_name, (), peak if np.isfinite(peak) else 0.0, 0, ())
    chosen = [c for c in range(len(categories)) if means[c] >= tau * peak and means[c] > 0]
    support = int(np.isin(idx, chosen).sum())
    return TuningRange(param_name, (), peak, support, tuple(categories[c] for c in chosen))


def _full_range(p: ParamSpec, n: int) -> TuningRange:
    if p.kind == CATEGORICAL:
        return TuningRange(p.name, (), 0.0, n, tuple(p.categories), fallback=True)
    return TuningRange(p.name, ((float(p.bounds[0]), float(p.bounds[1])),), 0.0, n, fallback=True)


def _clip_to_bounds(r: TuningRange, p: ParamSpec) -> TuningRange:
    lo_b, hi_b = float(p.bounds[0]), float(p.bounds[1])
    ivs = tuple((max(lo, lo_b), min(hi, hi_b)) for lo, hi in r.intervals)
    return TuningRange(r.param_name, tuple(iv for iv in ivs if iv[0] < iv[1]), r.peak_smoothed_shap, r.support)


def param_range(p: ParamSpec, encoded: np.ndarray, phi: np.ndarray, window_fraction: float, tau: float) -> TuningRange:
    """Tuning range of one parameter from its encoded sample column; falls back to full bounds."""
    n = encoded.size
    if n < MIN_SAMPLES:
        return _full_range(p, n)
    if p.kind == CATEGORICAL:
        r = extract_categories(np.round(encoded).astype(int), phi, p.categories, tau, p.name)
        return r if r.categories else _full_range(p, n)
    raw = 10.0**encoded if p.log_scale else encoded
    r = _clip_to_bounds(extract_ranges(raw, phi, window_fraction, tau, param_name=p.name, log_scale=p.log_scale), p)
    if p.kind == INTEGER:
        # integers: keep only intervals that contain an admissible value
        ivs = tuple(iv for iv in r.intervals if math.floor(iv[1]) >= math.ceil(iv[0]))
        r = TuningRange(r.param_name, ivs, r.peak_smoothed_shap, r.support)
    return r if r.intervals else _full_range(p, n)


def ranking(attr: AttributionResult) -> List[Tuple[str, float]]:
    order = sorted(range(len(attr.players)), key=lambda i: (-attr.global_importance[i], attr.players[i]))
    return [(attr.players[i], float(attr.global_importance[i])) for i in order]


def interaction_highlights(
    inter: InteractionMatrix, threshold: Optional[float] = None, min_value: float = MIN_INTERACTION
) -> List[Tuple[Tuple[str, str], float]]:
    """Off-diagonal pairs whose index reaches the threshold (default: a quarter of the largest pair)."""
    M = inter.matrix
    k = M.shape[0]
    iu = np.triu_indices(k, 1)
    off = np.abs(M[iu])
    if off.size == 0:
        return []
    thr = HIGHLIGHT_FRACTION * float(off.max()) if threshold is None else float(threshold)
    thr = max(thr, min_value)
    hits = [(float(M[i, j]), i, j) for i, j in zip(*iu) if abs(M[i, j]) >= thr]
    hits.sort(key=lambda h: (-abs(h[0]), h[1], h[2]))
    return [((inter.players[i], inter.players[j]), v) for v, i, j in hits]


def build_report(
    attr: AttributionResult,
    inter: InteractionMatrix,
    space: HyperparameterSpace,
    m: int = 3,
    interaction_threshold: Optional[float] = None,
    *,
    window_fraction: float = 0.05,
    tau: float = 0.5,
    min_interaction: float = MIN_INTERACTION,
    surrogate_r2: Optional[float] = None,
    algorithm: str = "",
    dataset: str = "",
    warm_start: Optional[Mapping[str, Any]] = None,
    provenance: Optional[Mapping[str, Any]] = None,
) -> TuningReport:
    if m < 1:
        raise ValidationError("m must be >= 1")
    if list(attr.players) != space.names:
        raise ValidationError("attribution players do not match the space parameters")
    ranked = ranking(attr)
    selected = tuple(n for n, _ in ranked[: min(m, space.k)])
    ranges = tuple(
        param_range(space[n], attr.samples[:, space.index(n)], attr.per_sample_phi[:, space.index(n)], window_fraction, tau)
        for n in selected
    )
    defaults = space.default_config()
    fixed = {n: defaults[n] for n in space.names if n not in selected}
    return TuningReport(
        ranking=tuple(ranked),
        selected=selected,
        ranges=ranges,
        fixed=fixed,
        interaction_highlights=tuple(interaction_highlights(inter, interaction_threshold, min_interaction)),
        surrogate_r2=surrogate_r2,
        algorithm=algorithm,
        dataset=dataset,
        warm_start=dict(warm_start) if warm_start is not None else None,
        provenance=dict(provenance or {}),
    )


def write_range_csvs(report: TuningReport, attr: AttributionResult, space: HyperparameterSpace, out_dir: os.PathLike,
                     window_fraction: float = 0.05) -> List[str]:
    """One ``ranges_<param>.csv`` (value, phi, smoothed_phi) per selected param; returns file names."""
    names = []
    for n in report.selected:
        j = space.index(n)
        p = space[n]
        enc = attr.samples[:, j]
        raw = 10.0**enc if p.log_scale and p.kind != CATEGORICAL else enc
        v, ph, sm = smooth_shap(raw, attr.per_sample_phi[:, j], window_fraction)
        fname = f"ranges_{n}.csv"
        with open(os.path.join(out_dir, fname), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["value", "phi", "smoothed_phi"])
            for row in zip(v, ph, sm):
                w.writerow([f"{x:.12g}" for x in row])
        names.append(fname)
    return names
