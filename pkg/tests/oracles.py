"""Reference implementations used only by the tests.

They are deliberately naive (explicit subsets, explicit permutations, numeric
quadrature) and share no code with the package.
"""

import itertools
import math

import numpy as np
from scipy import integrate, stats


def subsets(players):
    for r in range(len(players) + 1):
        yield from itertools.combinations(players, r)


def shapley_by_subsets(v, k):
    """v maps frozenset -> value."""
    phi = []
    for i in range(k):
        others = [j for j in range(k) if j != i]
        total = 0.0
        for S in subsets(others):
            s = len(S)
            w = math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k)
            total += w * (v[frozenset(S) | {i}] - v[frozenset(S)])
        phi.append(total)
    return np.array(phi)


def shapley_by_permutations(v, k):
    phi = np.zeros(k)
    perms = list(itertools.permutations(range(k)))
    for perm in perms:
        S = frozenset()
        for p in perm:
            phi[p] += v[S | {p}] - v[S]
            S = S | {p}
    return phi / len(perms)


def interaction_by_subsets(v, k, i, j):
    """Half of the pairwise Shapley interaction index."""
    others = [q for q in range(k) if q not in (i, j)]
    total = 0.0
    for S in subsets(others):
        S = frozenset(S)
        s = len(S)
        w = math.factorial(s) * math.factorial(k - s - 2) / (2 * math.factorial(k - 1))
        total += w * (v[S | {i, j}] - v[S | {i}] - v[S | {j}] + v[S])
    return total


def table_from_dict(v, k):
    """Bitmask-indexed array from a frozenset-keyed dict."""
    out = np.empty(2**k)
    for S, val in v.items():
        out[sum(1 << p for p in S)] = val
    return out


def random_game(rng, k):
    return {frozenset(S): float(rng.normal()) for S in subsets(range(k))}


def interventional_values(f, background, target):
    """All coalition values of a vectorised f by explicit replacement."""
    k = len(target)
    v = {}
    for S in subsets(range(k)):
        Z = np.array(background, dtype=float).copy()
        for p in S:
            Z[:, p] = target[p]
        v[frozenset(S)] = float(np.mean(f(Z)))
    return v


def expected_improvement_numeric(mu, sigma, best):
    """E[max(Y - best, 0)] for Y ~ N(mu, sigma^2) by quadrature."""
    if sigma == 0:
        return max(mu - best, 0.0)
    val, _ = integrate.quad(
        lambda y: (y - best) * stats.norm.pdf(y, mu, sigma), best, np.inf, epsabs=1e-13, epsrel=1e-12
    )
    return val


def interval_jaccard(a, b):
    """Jaccard overlap of two unions of disjoint intervals."""
    inter = sum(max(0.0, min(x1, y1) - max(x0, y0)) for x0, x1 in a for y0, y1 in b)
    union = sum(x1 - x0 for x0, x1 in a) + sum(y1 - y0 for y0, y1 in b) - inter
    return inter / union if union > 0 else 0.0


def brute_knn(query, rows, k):
    """(id, distance) pairs by full sort on z-scored values with numpy-free arithmetic."""
    ids = sorted(rows)
    dims = len(query)
    cols = [[rows[i][d] for i in ids] for d in range(dims)]
    means = [sum(c) / len(c) for c in cols]
    sds = [math.sqrt(sum((x - m) ** 2 for x in c) / len(c)) for c, m in zip(cols, means)]

    def z(vec):
        return [(x - m) / s if s > 1e-12 * max(1.0, abs(m)) else 0.0 for x, m, s in zip(vec, means, sds)]

    q = z(query)
    dist = [(math.sqrt(sum((a - b) ** 2 for a, b in zip(z(rows[i]), q))), i) for i in ids]
    dist.sort()
    return [(i, d) for d, i in dist[:k]]
