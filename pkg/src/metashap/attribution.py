"""Shapley attribution of hyperparameters over a surrogate.

Players are hyperparameters (encoded dimensions); the payoff of a coalition
``S`` is the interventional value

    v(S) = mean_b f(z),  z_i = x_i for i in S, b_i otherwise,

with ``b`` ranging over a background set. Coalitions are bitmasks: player
``i`` is bit ``i``, so ``values[mask]`` is ``v`` of that coalition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numba import njit

from metashap.errors import ValidationError
from metashap.surrogate import SurrogateModel

MAX_EXACT_PLAYERS = 15
MAX_EXACT_INTERACTION_PLAYERS = 12

Coalition = Union[int, Iterable[int]]


def as_mask(S: Coalition) -> int:
    if isinstance(S, (int, np.integer)):
        return int(S)
    mask = 0
    for i in S:
        mask |= 1 << int(i)
    return mask


def popcounts(k: int) -> np.ndarray:
    masks = np.arange(1 << k)
    return ((masks[:, None] >> np.arange(k)) & 1).sum(1)


# ------------------------------------------------------------------- games


class CoalitionGame:
    """Interventional game of a model around one explained configuration."""

    def __init__(self, model, background: np.ndarray, target: np.ndarray) -> None:
        background = np.atleast_2d(np.asarray(background, dtype=float))
        target = np.asarray(target, dtype=float)
        if background.shape[0] == 0:
            raise ValidationError("background must be nonempty")
        if target.ndim != 1 or background.shape[1] != target.shape[0]:
            raise ValidationError("background rows and target must share length k")
        self.model = model
        self.background = background
        self.target = target
        self.k = target.shape[0]
        self._cache: Dict[int, float] = {}
        self._all: Optional[np.ndarray] = None

    def values(self, masks: Sequence[int]) -> np.ndarray:
        """Coalition values for many masks, predicted in one batch and cached."""
        masks = [int(m) for m in masks]
        todo = sorted({m for m in masks if m not in self._cache})
        if todo:
            B = self.background.shape[0]
            full = (1 << self.k) - 1
            Z = np.repeat(self.background[None, :, :], len(todo), axis=0)
            for r, m in enumerate(todo):
                cols = [i for i in range(self.k) if m >> i & 1]
                Z[r][:, cols] = self.target[cols]
            pred = self.model.predict(Z.reshape(-1, self.k)).reshape(len(todo), B)
            for r, m in enumerate(todo):
                row = pred[r]
                # identical predictions return that value, so a dummy player's gap is exactly 0
                self._cache[m] = float(row[0]) if row.min() == row.max() else float(row.mean())
            if full in todo:
                self._cache[full] = float(self.model.predict(self.target[None, :])[0])
        return np.array([self._cache[m] for m in masks])

    def value(self, S: Coalition) -> float:
        return float(self.values([as_mask(S)])[0])

    def all_values(self) -> np.ndarray:
        """All ``2**k`` coalition values, computed once."""
        if self._all is None:
            if isinstance(self.model, SurrogateModel):
                self._all = ForestCoalitions(self.model, self.background).values(self.target[None, :])[0]
            else:
                self._all = self.values(range(1 << self.k))
        return self._all


class TabularGame:
    """Game given by an explicit table of ``2**k`` coalition values."""

    def __init__(self, table: Sequence[float]) -> None:
        table = np.asarray(table, dtype=float)
        k = int(round(math.log2(table.size)))
        if table.ndim != 1 or 1 << k != table.size:
            raise ValidationError("value table length must be a power of two")
        self.k = k
        self.table = table

    def values(self, masks: Sequence[int]) -> np.ndarray:
        return self.table[np.asarray(list(masks), dtype=int)]

    def value(self, S: Coalition) -> float:
        return float(self.table[as_mask(S)])

    def all_values(self) -> np.ndarray:
        return self.table


def coalition_value(game, S: Coalition) -> float:
    """``v(S)``: mean prediction with players in ``S`` taken from the target."""
    return game.value(S)


# ----------------------------------------------------- forest fast path


def _ternary_weights(k: int) -> np.ndarray:
    masks = np.arange(1 << k)
    bits = (masks[:, None] >> np.arange(k)) & 1
    return (bits * 3 ** np.arange(k)).sum(1).astype(np.int64)


def _ternary_to_subsets(acc: np.ndarray, k: int) -> np.ndarray:
    """Expand (must-in, must-out, free) constraint sums into values for every coalition.

    ``acc`` has shape ``(n, 3**k)`` with base-3 digit ``d`` of the column index
    equal to 0 (player d unconstrained), 1 (player d must be in S) or 2 (must be
    out). Returns ``(n, 2**k)`` where entry ``S`` sums every constraint ``S``
    satisfies.
    """
    n = acc.shape[0]
    A = acc.reshape((n,) + (3,) * k)
    for axis in range(1, k + 1):
        free = np.take(A, 0, axis=axis)
        A = np.stack([free + np.take(A, 2, axis=axis), free + np.take(A, 1, axis=axis)], axis=axis)
    return A.reshape(n, 1 << k)


class ForestCoalitions:
    """Exact interventional coalition values of a forest for every ``S`` at once.

    A row ``z`` built from target ``x`` and background ``b`` reaches leaf ``L``
    iff every dimension where ``x`` leaves ``L``'s box is taken from ``b`` and
    every dimension where ``b`` leaves the box is taken from ``x``. Writing
    ``Fx``/``Fb`` for those failure masks, ``L`` contributes to ``v(S)`` exactly
    when ``Fb ⊆ S`` and ``S ∩ Fx = ∅``. Background failure masks are tallied
    per leaf once; each target then only needs its own failure masks.
    """

    def __init__(self, model: SurrogateModel, background: np.ndarray) -> None:
        k = model.k
        if k > MAX_EXACT_PLAYERS:
            raise ValidationError(f"exact coalition values need k <= {MAX_EXACT_PLAYERS}")
        self.k = k
        boxes = [t.leaf_boxes(k) for t in model.trees]
        self.lo = np.concatenate([b[0] for b in boxes])
        self.hi = np.concatenate([b[1] for b in boxes])
        val = np.concatenate([b[2] for b in boxes]) / model.n_trees
        bg32 = np.asarray(background, dtype=float).astype(np.float32).astype(np.float64)
        B = bg32.shape[0]
        n_leaves = self.lo.shape[0]
        keys = []
        step = max(1, 4_000_000 // (B * k))
        for s in range(0, n_leaves, step):
            fb = self._fail_masks(bg32, slice(s, s + step))  # (B, chunk)
            keys.append(((np.arange(s, s + fb.shape[1])[None, :] << k) | fb).ravel())
        keys, counts = np.unique(np.concatenate(keys), return_counts=True)
        self.pair_leaf = keys >> k
        self.pair_mask = keys & ((1 << k) - 1)
        self.pair_weight = val[self.pair_leaf] * counts / B
        self.tern = _ternary_weights(k)
        self.pair_in = self.tern[self.pair_mask]

    def _fail_masks(self, X: np.ndarray, leaves: slice) -> np.ndarray:
        return _fail_masks_kernel(np.ascontiguousarray(X), self.lo[leaves], self.hi[leaves])

    def values(self, targets: np.ndarray, batch: Optional[int] = None) -> np.ndarray:
        """``(n, 2**k)`` coalition values for each target row."""
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        x32 = targets.astype(np.float32).astype(np.float64)
        n, k = x32.shape
        size = 3**k
        if batch is None:
            batch = max(1, min(64, 20_000_000 // max(self.pair_leaf.size, size)))
        out = np.empty((n, 1 << k))
        for s in range(0, n, batch):
            xb = x32[s : s + batch]
            fx = self._fail_masks(xb, slice(None))[:, self.pair_leaf]  # (nb, P)
            ok = (fx & self.pair_mask[None, :]) == 0
            rows, cols = np.nonzero(ok)
            idx = rows * size + self.pair_in[cols] + 2 * self.tern[fx[rows, cols]]
            acc = np.bincount(idx, weights=self.pair_weight[cols], minlength=xb.shape[0] * size)
            out[s : s + batch] = _ternary_to_subsets(acc.reshape(xb.shape[0], size), k)
        return out

    def shapley(self, targets: np.ndarray) -> np.ndarray:
        """``(n, k)`` exact Shapley values, without materialising coalition tables.

        Each (leaf, Fb, Fx) constraint is the game ``w [Fb ⊆ S][S ∩ Fx = ∅]``,
        whose Shapley value is ``w (a-1)! c! / (a+c)!`` for players in ``Fb``
        and ``-w a! (c-1)! / (a+c)!`` for players in ``Fx`` (``a = |Fb|``,
        ``c = |Fx|``). Within a leaf, targets sharing ``Fx`` share the result.
        """
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        x32 = targets.astype(np.float32).astype(np.float64)
        k = x32.shape[1]
        F = np.ascontiguousarray(self._fail_masks(x32, slice(None)).T)  # (leaves, n)
        fact = np.array([math.factorial(i) for i in range(2 * k + 1)], dtype=float)
        sz = np.arange(k + 1)
        a, c = sz[:, None], sz[None, :]
        coef_in = np.where(a >= 1, fact[np.maximum(a - 1, 0)] * fact[c] / fact[a + c], 0.0)
        coef_out = np.where(c >= 1, -fact[a] * fact[np.maximum(c - 1, 0)] / fact[a + c], 0.0)
        starts = np.searchsorted(self.pair_leaf, np.arange(self.lo.shape[0])).astype(np.int64)
        ends = np.append(starts[1:], self.pair_leaf.size).astype(np.int64)
        return _leaf_shapley_kernel(F, starts, ends, self.pair_mask, self.pair_weight, coef_in, coef_out,
                                    popcounts(k), k)


@njit(cache=True)
def _fail_masks_kernel(X, lo, hi):
    n, k = X.shape
    L = lo.shape[0]
    out = np.zeros((n, L), dtype=np.int64)
    for r in range(n):
        for leaf in range(L):
            f = 0
            for d in range(k):
                x = X[r, d]
                if not (x > lo[leaf, d] and x <= hi[leaf, d]):
                    f |= 1 << d
            out[r, leaf] = f
    return out


@njit(cache=True)
def _leaf_shapley_kernel(F, starts, ends, pair_mask, pair_weight, coef_in, coef_out, pc, k):
    n_leaves, n = F.shape
    phi = np.zeros((n, k))
    cache = np.zeros((1 << k, k))
    stamp = np.full(1 << k, -1, dtype=np.int64)
    for leaf in range(n_leaves):
        for r in range(n):
            f = F[leaf, r]
            if stamp[f] != leaf:
                stamp[f] = leaf
                for i in range(k):
                    cache[f, i] = 0.0
                cf = pc[f]
                out_sum = 0.0
                for p in range(starts[leaf], ends[leaf]):
                    m = pair_mask[p]
                    if m & f:
                        continue
                    w = pair_weight[p]
                    cm = pc[m]
                    a = w * coef_in[cm, cf]
                    for i in range(k):
                        if (m >> i) & 1:
                            cache[f, i] += a
                    out_sum += w * coef_out[cm, cf]
                for i in range(k):
                    if (f >> i) & 1:
                        cache[f, i] += out_sum
            for i in range(k):
                phi[r, i] += cache[f, i]
    return phi


# ------------------------------------------------------- shapley values


def _shapley_weights(k: int) -> np.ndarray:
    """Weight of a coalition of size s not containing the player, for s = 0..k-1."""
    return np.array([math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k) for s in range(k)])


def shapley_from_values(values: np.ndarray, k: int) -> np.ndarray:
    """Shapley values from a ``(..., 2**k)`` table of coalition values."""
    values = np.asarray(values, dtype=float)
    masks = np.arange(1 << k)
    sizes = popcounts(k)
    w = _shapley_weights(k)
    phi = np.empty(values.shape[:-1] + (k,))
    for i in range(k):
        without = masks[(masks >> i & 1) == 0]
        diff = values[..., without | (1 << i)] - values[..., without]
        phi[..., i] = diff @ w[sizes[without]]
    return phi


def shapley_exact(game) -> np.ndarray:
    """Exact Shapley values by enumerating all ``2**k`` coalitions."""
    if game.k > MAX_EXACT_PLAYERS:
        raise ValidationError(f"k={game.k} exceeds {MAX_EXACT_PLAYERS}; use shapley_sampled")
    return shapley_from_values(game.all_values(), game.k)


def shapley_sampled(game, n_permutations: int = 1000, seed: int = 42) -> Tuple[np.ndarray, np.ndarray]:
    """Permutation-sampling estimate of the Shapley values and their standard errors."""
    if n_permutations < 100:
        raise ValidationError("n_permutations must be >= 100")
    k = game.k
    rng = np.random.default_rng(seed)
    perms = np.array([rng.permutation(k) for _ in range(n_permutations)])
    prefix = np.zeros((n_permutations, k + 1), dtype=np.int64)
    for pos in range(k):
        prefix[:, pos + 1] = prefix[:, pos] | (np.int64(1) << perms[:, pos])
    uniq, inv = np.unique(prefix, return_inverse=True)
    v = game.values(uniq.tolist())[inv.reshape(prefix.shape)]
    contrib = np.empty((n_permutations, k))
    rows = np.arange(n_permutations)[:, None]
    contrib[rows, perms] = v[:, 1:] - v[:, :-1]
    phi = contrib.mean(0)
    se = contrib.std(0, ddof=1) / math.sqrt(n_permutations)
    return phi, se


# ------------------------------------------------------ interactions


def _interaction_weights(k: int) -> np.ndarray:
    """Weight of a coalition of size s excluding both players, for s = 0..k-2."""
    return np.array(
        [math.factorial(s) * math.factorial(k - s - 2) / (2 * math.factorial(k - 1)) for s in range(k - 1)]
    )


def interaction_from_values(values: np.ndarray, k: int, i: int, j: int) -> float:
    if i == j:
        raise ValidationError("interaction index needs two distinct players")
    masks = np.arange(1 << k)
    sizes = popcounts(k)
    bi, bj = 1 << i, 1 << j
    S = masks[(masks & (bi | bj)) == 0]
    delta = values[S | bi | bj] - values[S | bi] - values[S | bj] + values[S]
    return float(delta @ _interaction_weights(k)[sizes[S]])


def interaction_exact(game, i: int, j: int) -> float:
    """Pairwise Shapley interaction value of players ``i`` and ``j``."""
    if i == j:
        raise ValidationError("interaction index needs two distinct players")
    if game.k > MAX_EXACT_INTERACTION_PLAYERS:
        raise ValidationError(f"k={game.k} exceeds {MAX_EXACT_INTERACTION_PLAYERS} for exact interactions")
    return interaction_from_values(game.all_values(), game.k, i, j)


def interaction_sampled(game, i: int, j: int, n_samples: int = 200, seed: int = 42) -> float:
    """Monte-Carlo interaction value: the pair is merged and a random predecessor set drawn."""
    if i == j:
        raise ValidationError("interaction index needs two distinct players")
    k = game.k
    others = np.array([p for p in range(k) if p not in (i, j)])
    rng = np.random.default_rng([seed, i, j])
    bi, bj = 1 << i, 1 << j
    masks = []
    for _ in range(n_samples):
        perm = rng.permutation(others)
        size = rng.integers(0, k - 1)
        S = as_mask(perm[:size])
        masks.append((S, S | bi, S | bj, S | bi | bj))
    flat = [m for quad in masks for m in quad]
    v = game.values(flat).reshape(-1, 4)
    return float(0.5 * (v[:, 3] - v[:, 1] - v[:, 2] + v[:, 0]).mean())


def interaction_matrix_from_values(values: np.ndarray, k: int) -> np.ndarray:
    """Symmetric matrix: pair values off the diagonal, main effects on it."""
    phi = shapley_from_values(values, k)
    M = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            M[i, j] = M[j, i] = interaction_from_values(values, k, i, j)
    # the pair values already carry the 1/2 share of the full interaction index
    M[np.diag_indices(k)] = phi - M.sum(1)
    return M


# ------------------------------------------------------ global results


@dataclass
class AttributionResult:
    per_sample_phi: np.ndarray
    base_value: float
    global_importance: np.ndarray
    samples: np.ndarray
    players: List[str]
    method: str = "exact"
    n_permutations: Optional[int] = None
    standard_errors: Optional[np.ndarray] = None
    full_values: Optional[np.ndarray] = None

    def efficiency_gap(self) -> np.ndarray:
        return self.per_sample_phi.sum(1) - (self.full_values - self.base_value)


@dataclass
class InteractionMatrix:
    matrix: np.ndarray
    players: List[str]
    sample: np.ndarray
    v_full: float
    v_empty: float

    def completeness_gap(self) -> float:
        return float(self.matrix.sum() - (self.v_full - self.v_empty))


def medoid_index(X: np.ndarray) -> int:
    X = np.asarray(X, dtype=float)
    span = X.max(0) - X.min(0)
    Z = (X - X.min(0)) / np.where(span > 0, span, 1.0)
    sq = (Z * Z).sum(1)
    D = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2 * Z @ Z.T, 0.0))
    return int(np.argmin(D.sum(1)))


def global_attribution(
    model,
    background: np.ndarray,
    explain_set: np.ndarray,
    players: Optional[Sequence[str]] = None,
    n_permutations: int = 1000,
    seed: int = 42,
) -> Tuple[AttributionResult, InteractionMatrix]:
    """Per-sample Shapley values over ``explain_set`` plus interactions at its medoid."""
    background = np.atleast_2d(np.asarray(background, dtype=float))
    explain_set = np.atleast_2d(np.asarray(explain_set, dtype=float))
    if explain_set.shape[0] == 0 or explain_set.size == 0:
        raise ValidationError("explain_set must be nonempty")
    k = explain_set.shape[1]
    players = list(players) if players is not None else [f"x{i}" for i in range(k)]
    base_pred = model.predict(background)
    base_value = float(base_pred[0]) if base_pred.min() == base_pred.max() else float(base_pred.mean())
    full_values = model.predict(explain_set)
    medoid = medoid_index(explain_set)

    if k <= MAX_EXACT_PLAYERS:
        if isinstance(model, SurrogateModel):
            fc = ForestCoalitions(model, background)
            phi = fc.shapley(explain_set)
            v_med = fc.values(explain_set[medoid : medoid + 1])[0] if k <= MAX_EXACT_INTERACTION_PLAYERS else None
        else:
            V = np.array([CoalitionGame(model, background, x).all_values() for x in explain_set])
            phi = shapley_from_values(V, k)
            v_med = V[medoid]
        result = AttributionResult(phi, base_value, np.abs(phi).mean(0), explain_set, players, "exact",
                                   full_values=full_values)
    else:
        est = [shapley_sampled(CoalitionGame(model, background, x), n_permutations, seed) for x in explain_set]
        phi = np.array([e[0] for e in est])
        se = np.array([e[1] for e in est])
        result = AttributionResult(phi, base_value, np.abs(phi).mean(0), explain_set, players, "sampled",
                                   n_permutations, se, full_values)
        v_med = None

    if k <= MAX_EXACT_INTERACTION_PLAYERS:
        M = interaction_matrix_from_values(v_med, k)
    else:
        game = CoalitionGame(model, background, explain_set[medoid])
        M = np.zeros((k, k))
        for i in range(k):
            for j in range(i + 1, k):
                M[i, j] = M[j, i] = interaction_sampled(game, i, j, seed=seed)
        M[np.diag_indices(k)] = phi[medoid] - M.sum(1)
    inter = InteractionMatrix(M, players, explain_set[medoid], float(full_values[medoid]), base_value)
    return result, inter


def default_background(X: np.ndarray, size: int = 256, seed: int = 42) -> np.ndarray:
    """Up to ``size`` rows subsampled without replacement under a fixed seed."""
    X = np.asarray(X, dtype=float)
    if X.shape[0] <= size:
        return X.copy()
    idx = np.sort(np.random.default_rng(seed).choice(X.shape[0], size=size, replace=False))
    return X[idx]
