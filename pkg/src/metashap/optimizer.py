"""Gaussian-process Bayesian optimisation, vanilla or restricted by a tuning report.

The GP uses a squared-exponential ARD kernel on unit-cube inputs, a constant
mean (the training average after standardising y) and a learned noise term.
Hyperparameters maximise the log marginal likelihood with multi-start
Nelder-Mead. The acquisition is closed-form expected improvement, maximised
over a scrambled Sobol candidate set plus perturbations of the incumbent.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from scipy.linalg import LinAlgError, cho_solve, cholesky
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from metashap.errors import ValidationError
from metashap.insights import TuningRange, TuningReport
from metashap.space import (
    CATEGORICAL,
    INTEGER,
    HyperparameterSpace,
    ParamSpec,
    decode,
    encode,
    from_unit,
    snap_unit,
    to_unit,
)

JITTER = 1e-6
NOISE_BOUNDS = (1e-6, 1e-2)
LENGTH_BOUNDS = (1e-2, 2e1)
SIGNAL_BOUNDS = (5e-2, 2e1)
VAR_FLOOR = 1e-12
N_SOBOL = 2048
N_LOCAL = 256
LOCAL_SCALE = 0.05

Config = Dict[str, Any]


# ---------------------------------------------------------------------- GP


def se_kernel(A: np.ndarray, B: np.ndarray, length_scales: np.ndarray, signal_var: float) -> np.ndarray:
    d = (A[:, None, :] - B[None, :, :]) / length_scales
    return signal_var * np.exp(-0.5 * np.sum(d * d, axis=-1))


def _chol(K: np.ndarray) -> np.ndarray:
    """Cholesky factor, adding escalating jitter if the matrix is numerically singular."""
    eye = np.eye(K.shape[0])
    for extra in (0.0, 1e-5, 1e-4, 1e-3, 1e-2):
        try:
            return cholesky(K + extra * eye, lower=True)
        except LinAlgError:
            continue
    raise ValidationError("GP covariance is not positive definite even with added jitter")


@dataclass
class GPModel:
    X: np.ndarray
    y: np.ndarray
    length_scales: np.ndarray
    signal_var: float
    noise_var: float  # learned part; JITTER is always added on top
    y_mean: float
    y_std: float
    L: np.ndarray = field(repr=False, default=None)
    alpha: np.ndarray = field(repr=False, default=None)

    def __post_init__(self) -> None:
        if self.L is None:
            K = se_kernel(self.X, self.X, self.length_scales, self.signal_var)
            K[np.diag_indices_from(K)] += self.noise_var + JITTER
            self.L = _chol(K)
            self.alpha = cho_solve((self.L, True), (self.y - self.y_mean) / self.y_std)

    @property
    def noise(self) -> float:
        """Total observation noise variance (learned plus jitter) in the original y units."""
        return (self.noise_var + JITTER) * self.y_std**2

    def predict(self, Xq: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance of the latent function, in the original y units."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Ks = se_kernel(Xq, self.X, self.length_scales, self.signal_var)
        mu = Ks @ self.alpha
        v = np.linalg.solve(self.L, Ks.T) if self.X.shape[0] else np.zeros((0, Xq.shape[0]))
        var = np.maximum(self.signal_var - np.sum(v * v, axis=0), VAR_FLOOR)
        return self.y_mean + self.y_std * mu, var * self.y_std**2


@njit(cache=True)
def _nlml_kernel(theta, D2, z, jitter):
    d, n = D2.shape[0], D2.shape[1]
    sf, sn = math.exp(theta[d]), math.exp(theta[d + 1])
    inv_l2 = np.exp(-2.0 * theta[:d])
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            r = 0.0
            for t in range(d):
                r += inv_l2[t] * D2[t, i, j]
            L[i, j] = sf * math.exp(-0.5 * r)
        L[i, i] += sn + jitter
    # in-place Cholesky of the lower triangle
    for j in range(n):
        s = L[j, j]
        for t in range(j):
            s -= L[j, t] * L[j, t]
        if s <= 0.0:
            return 1e25
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            s = L[i, j]
            for t in range(j):
                s -= L[i, t] * L[j, t]
            L[i, j] = s / L[j, j]
    quad, logdet = 0.0, 0.0
    w = np.empty(n)
    for i in range(n):
        s = z[i]
        for t in range(i):
            s -= L[i, t] * w[t]
        w[i] = s / L[i, i]
        quad += w[i] * w[i]
        logdet += math.log(L[i, i])
    return 0.5 * quad + logdet + 0.5 * n * math.log(2 * math.pi)


def _neg_log_marginal(theta: np.ndarray, D2: np.ndarray, z: np.ndarray) -> float:
    """Negative log marginal likelihood; ``D2`` holds per-dimension squared differences ``(d, n, n)``."""
    return float(_nlml_kernel(theta, D2, z, JITTER))


def gp_fit(X: np.ndarray, y: np.ndarray, seed: int = 0, n_restarts: int = 8, maxfev: int = 300) -> GPModel:
    """Fit kernel hyperparameters by maximum marginal likelihood (multi-start Nelder-Mead)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0] or X.shape[0] == 0:
        raise ValidationError("GP needs a nonempty training set with matching X and y")
    n, d = X.shape
    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std < 1e-12:
        # flat observations: nothing to learn, keep a smooth unit-scale prior
        return GPModel(X, y, np.full(d, 0.5), 1.0, NOISE_BOUNDS[0], y_mean, 1.0)
    z = (y - y_mean) / y_std
    lo = np.log([LENGTH_BOUNDS[0]] * d + [SIGNAL_BOUNDS[0], NOISE_BOUNDS[0]])
    hi = np.log([LENGTH_BOUNDS[1]] * d + [SIGNAL_BOUNDS[1], NOISE_BOUNDS[1]])
    D2 = np.stack([np.subtract.outer(X[:, j], X[:, j]) ** 2 for j in range(d)])
    rng = np.random.default_rng(seed)
    starts = [np.log([0.3] * d + [1.0, 1e-4])]
    starts += [rng.uniform(lo, hi) for _ in range(n_restarts - 1)]
    best_theta, best_val = starts[0], np.inf
    for s in starts:
        res = minimize(_neg_log_marginal, s, args=(D2, z), method="Nelder-Mead",
                       bounds=list(zip(lo, hi)), options={"maxfev": maxfev, "xatol": 1e-4, "fatol": 1e-6})
        if res.fun < best_val:
            best_val, best_theta = res.fun, res.x
    th = np.clip(best_theta, lo, hi)
    return GPModel(X, y, np.exp(th[:d]), float(math.exp(th[d])), float(math.exp(th[d + 1])), y_mean, y_std)


def ei_from_moments(mu: np.ndarray, var: np.ndarray, best: float) -> np.ndarray:
    """Closed-form expected improvement over ``best`` for maximisation."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(var, dtype=float), 0.0))
    out = np.maximum(mu - best, 0.0)
    ok = sigma > 1e-12
    zz = (mu[ok] - best) / sigma[ok]
    out[ok] = (mu[ok] - best) * norm.cdf(zz) + sigma[ok] * norm.pdf(zz)
    return out


def expected_improvement(model: GPModel, x: np.ndarray, best: float) -> np.ndarray:
    """EI at one point (returns a float) or at each row of ``x``."""
    x = np.asarray(x, dtype=float)
    mu, var = model.predict(np.atleast_2d(x))
    ei = ei_from_moments(mu, var, best)
    return float(ei[0]) if x.ndim == 1 else ei


# ------------------------------------------------------------- objectives


class Objective:
    """Counting wrapper around ``config -> performance``."""

    def __init__(self, fn: Callable[[Mapping[str, Any]], float], name: str = "objective") -> None:
        self.fn = fn
        self.name = name
        self.calls = 0

    def __call__(self, config: Mapping[str, Any]) -> float:
        self.calls += 1
        y = float(self.fn(config))
        if not 0.0 <= y <= 1.0 or math.isnan(y):
            raise ValidationError(f"objective returned {y}, outside [0, 1]")
        return y


class NoisyObjective:
    """Surface plus Gaussian noise drawn from a private generator, clipped to [0, 1]."""

    def __init__(self, fn: Callable[[Mapping[str, Any]], float], sigma: float, seed: int = 0) -> None:
        self.fn, self.sigma = fn, sigma
        self.rng = np.random.default_rng(seed)

    def __call__(self, config: Mapping[str, Any]) -> float:
        return float(np.clip(self.fn(config) + self.sigma * self.rng.standard_normal(), 0.0, 1.0))


# --------------------------------------------------------- search domains


class FullDomain:
    """The whole space, searched in unit coordinates."""

    def __init__(self, space: HyperparameterSpace) -> None:
        self.space = space
        self.dim = space.k
        self.categorical_dims = [j for j, p in enumerate(space.params) if p.kind == CATEGORICAL]
        self.warnings: List[str] = []

    def to_config(self, u: np.ndarray) -> Config:
        return decode(from_unit(snap_unit(u, self.space)[0], self.space), self.space)

    def to_latent(self, config: Mapping[str, Any]) -> np.ndarray:
        return to_unit(encode(config, self.space), self.space)

    def snap(self, U: np.ndarray) -> np.ndarray:
        return snap_unit(U, self.space)


class _Axis:
    """One restricted parameter mapped onto [0, 1]."""

    def __init__(self, p: ParamSpec, r: Optional[TuningRange], warnings: List[str]) -> None:
        self.p = p
        if p.kind == CATEGORICAL:
            cats = list(r.categories) if r is not None and r.categories else []
            if not cats:
                warnings.append(f"{p.name}: no recommended categories, searching all")
                cats = list(p.categories)
            self.levels = [p.categories.index(c) for c in cats]
            return
        ivs = list(r.intervals) if r is not None else []
        if not ivs:
            warnings.append(f"{p.name}: empty tuning range, searching full bounds")
            ivs = [tuple(p.bounds)]
        if p.kind == INTEGER:
            vals = sorted({v for lo, hi in ivs for v in range(math.ceil(lo), math.floor(hi) + 1)})
            if not vals:
                warnings.append(f"{p.name}: tuning range holds no integers, searching full bounds")
                vals = list(range(math.ceil(p.bounds[0]), math.floor(p.bounds[1]) + 1))
            self.levels = vals
            return
        self.levels = None
        self.enc = [(p.encode(lo), p.encode(hi)) for lo, hi in ivs]
        widths = np.array([b - a for a, b in self.enc])
        self.cum = np.concatenate(([0.0], np.cumsum(widths)))

    def value(self, u: float) -> Any:
        u = min(max(float(u), 0.0), 1.0)
        if self.levels is not None:
            i = int(round(u * (len(self.levels) - 1))) if len(self.levels) > 1 else 0
            lv = self.levels[i]
            return self.p.categories[lv] if self.p.kind == CATEGORICAL else int(lv)
        t = u * self.cum[-1]
        i = min(int(np.searchsorted(self.cum, t, side="right")) - 1, len(self.enc) - 1)
        a, b = self.enc[i]
        return self.p.decode(min(a + (t - self.cum[i]), b))

    def latent(self, value: Any) -> float:
        if self.levels is not None:
            if len(self.levels) == 1:
                return 0.0
            key = self.p.categories.index(value) if self.p.kind == CATEGORICAL else int(value)
            i = int(np.argmin([abs(lv - key) for lv in self.levels]))
            return i / (len(self.levels) - 1)
        e = self.p.encode(value)
        dists = [0.0 if a <= e <= b else min(abs(e - a), abs(e - b)) for a, b in self.enc]
        i = int(np.argmin(dists))
        a, b = self.enc[i]
        e = min(max(e, a), b)
        return float((self.cum[i] + e - a) / self.cum[-1]) if self.cum[-1] > 0 else 0.0


class RestrictedDomain:
    """Selected parameters inside their recommended intervals, the rest held fixed.

    Disjoint intervals are laid end to end on each latent axis, so the search
    covers them in proportion to their width.
    """

    def __init__(self, space: HyperparameterSpace, report: TuningReport) -> None:
        self.space = space
        self.warnings: List[str] = []
        self.names = [n for n in report.selected]
        unknown = [n for n in self.names if n not in space.names]
        if unknown:
            raise ValidationError(f"report selects unknown params {unknown}")
        ranges = {r.param_name: r for r in report.ranges}
        self.axes = [_Axis(space[n], ranges.get(n), self.warnings) for n in self.names]
        defaults = space.default_config()
        self.fixed = {n: report.fixed.get(n, defaults[n]) for n in space.names if n not in self.names}
        self.dim = len(self.names)
        self.categorical_dims: List[int] = []

    def to_config(self, u: np.ndarray) -> Config:
        cfg = dict(self.fixed)
        for ax, n, x in zip(self.axes, self.names, np.ravel(u)):
            cfg[n] = ax.value(x)
        return {n: cfg[n] for n in self.space.names}

    def to_latent(self, config: Mapping[str, Any]) -> np.ndarray:
        return np.array([ax.latent(config[n]) for ax, n in zip(self.axes, self.names)])

    def snap(self, U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(U)
        return np.array([self.to_latent(self.to_config(u)) for u in U])

    def project(self, config: Mapping[str, Any]) -> Config:
        """Nearest admissible configuration: selected params clamped into range, others fixed."""
        return self.to_config(self.to_latent(config))


# -------------------------------------------------------------------- BO


@dataclass
class BOTrace:
    iterations: List[Tuple[Config, float, float]]
    mode: str
    budget: int
    notes: List[str] = field(default_factory=list)

    @property
    def best_so_far(self) -> np.ndarray:
        return np.array([b for _, _, b in self.iterations])

    @property
    def best_config(self) -> Config:
        i = int(np.argmax([y for _, y, _ in self.iterations]))
        return self.iterations[i][0]

    def to_rows(self, run: Optional[int] = None) -> List[List[Any]]:
        rows = []
        for t, (cfg, y, b) in enumerate(self.iterations, start=1):
            row = [] if run is None else [run]
            rows.append(row + [t, json.dumps(cfg, sort_keys=True), f"{y:.12g}", f"{b:.12g}", self.mode])
        return rows


TRACE_HEADER = ["iteration", "config", "observed", "best_so_far", "mode"]


def write_traces(path: os.PathLike, traces: Sequence[BOTrace]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run"] + TRACE_HEADER)
        for r, tr in enumerate(traces):
            w.writerows(tr.to_rows(r))


def _key(u: np.ndarray) -> Tuple[float, ...]:
    return tuple(np.round(u, 9))


def _initial_design(domain, n: int, rng: np.random.Generator, seen: set) -> List[np.ndarray]:
    if n <= 0:
        return []
    U = qmc.LatinHypercube(d=domain.dim, seed=rng).random(n) if domain.dim else np.zeros((n, 0))
    for j in domain.categorical_dims:
        U[:, j] = rng.random(n)
    out = []
    for u in domain.snap(U):
        tries = 0
        while _key(u) in seen and tries < 100:
            u = domain.snap(rng.random((1, domain.dim)))[0]
            tries += 1
        seen.add(_key(u))
        out.append(u)
    return out


def _propose(domain, U: np.ndarray, y: np.ndarray, rng: np.random.Generator, seed: int, seen: set) -> Optional[np.ndarray]:
    gp = gp_fit(U, y, seed=seed)
    sobol = qmc.Sobol(d=domain.dim, scramble=True, seed=rng).random(N_SOBOL)
    inc = U[int(np.argmax(y))]
    local = np.clip(inc + LOCAL_SCALE * rng.standard_normal((N_LOCAL, domain.dim)), 0.0, 1.0)
    C = domain.snap(np.vstack([sobol, local]))
    fresh = np.array([_key(c) not in seen for c in C])
    if not fresh.any():
        return None
    C = C[fresh]
    ei = expected_improvement(gp, C, float(y.max()))
    return C[int(np.argmax(ei))]


def _run(objective, domain, budget: int, init: int, seed: int, mode: str,
         first: Optional[Config] = None) -> BOTrace:
    if budget < 1 or init < 0:
        raise ValidationError("budget must be >= 1 and init >= 0")
    rng = np.random.default_rng(seed)
    seen: set = set()
    pts: List[np.ndarray] = []
    if first is not None:
        u0 = domain.to_latent(first)
        pts.append(u0)
        seen.add(_key(u0))
    pts += _initial_design(domain, min(init, budget - len(pts)), rng, seen)
    iters: List[Tuple[Config, float, float]] = []
    notes = list(domain.warnings)
    best = -np.inf
    ys: List[float] = []
    cache: Dict[Tuple[float, ...], float] = {}

    def evaluate(u: np.ndarray) -> None:
        nonlocal best
        cfg = domain.to_config(u)
        key = _key(u)
        if key not in cache:
            cache[key] = float(objective(cfg))
        yv = cache[key]
        best = max(best, yv)
        ys.append(yv)
        iters.append((cfg, yv, best))

    for u in pts:
        evaluate(u)
    while len(iters) < budget:
        u = None
        if domain.dim:
            u = _propose(domain, np.array(pts), np.array(ys), rng, seed + len(iters), seen)
        if u is None:
            # every candidate already evaluated: record the incumbent again without a new call
            notes.append(f"iteration {len(iters) + 1}: candidate pool exhausted, repeating incumbent")
            u = pts[int(np.argmax(ys))] if pts else np.zeros(domain.dim)
        seen.add(_key(u))
        pts.append(u)
        evaluate(u)
    return BOTrace(iters, mode, budget, notes)


def bo_run(objective, space: HyperparameterSpace, budget: int = 30, init: int = 5, seed: int = 42) -> BOTrace:
    """Vanilla BO over the full space: ``init`` Latin-hypercube points, then EI steps."""
    if budget < init or init < 2:
        raise ValidationError("need budget >= init >= 2")
    return _run(objective, FullDomain(space), budget, init, seed, "vanilla")


def guided_bo_run(objective, space: HyperparameterSpace, report: TuningReport, budget: int = 30, init: int = 3,
                  seed: int = 42) -> BOTrace:
    """BO over the report's selected params inside their ranges, warm-started at the report's best config."""
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    domain = RestrictedDomain(space, report)
    first = domain.project(report.warm_start) if report.warm_start is not None else None
    n_init = init if first is None else min(init, budget - 1)
    return _run(objective, domain, budget, n_init, seed, "guided", first)


def iterations_to_reach(trace: BOTrace, target: float) -> int:
    """First 1-based iteration whose best-so-far reaches ``target``; budget + 1 if never."""
    hits = np.flatnonzero(trace.best_so_far >= target)
    return int(hits[0]) + 1 if hits.size else trace.budget + 1
