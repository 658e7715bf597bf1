#!/usr/bin/env python
"""Permutation-sampling error and standard error against the exact Shapley values.

    python scripts/sampling_convergence.py --k 6 --sweep 250 500 1000 2000 4000
"""

import argparse
from dataclasses import dataclass, field
from typing import List

import numpy as np

from metashap.attribution import CoalitionGame, shapley_exact, shapley_sampled
from metashap.benchgen import SurfaceModel, make_surface
from metashap.space import from_unit


@dataclass
class Experiment:
    k: int = 6
    n_relevant: int = 4
    interaction_pairs: int = 2
    background: int = 32
    seed: int = 0
    repeats: int = 10
    sweep: List[int] = field(default_factory=lambda: [250, 500, 1000, 2000, 4000])


def run(exp: Experiment):
    surface, _ = make_surface(exp.k, exp.n_relevant, exp.interaction_pairs, seed=exp.seed)
    rng = np.random.default_rng(exp.seed)
    game = CoalitionGame(SurfaceModel(surface), from_unit(rng.random((exp.background, exp.k)), surface.space),
                         from_unit(rng.random(exp.k), surface.space))
    exact = shapley_exact(game)
    print(f"exact phi: {np.round(exact, 5).tolist()}")
    print(f"{'n':>6} {'rmse':>10} {'mean se':>10} {'max |z|':>8}")
    for n in exp.sweep:
        errs, ses, zs = [], [], []
        for r in range(exp.repeats):
            est, se = shapley_sampled(game, n, seed=1000 * r + n)
            live = se > 1e-12
            errs.append(est - exact)
            ses.append(se[live].mean())
            zs.append(np.abs((est - exact)[live] / se[live]).max() if live.any() else 0.0)
        rmse = float(np.sqrt(np.mean(np.square(errs))))
        print(f"{n:6d} {rmse:10.2e} {np.mean(ses):10.2e} {np.max(zs):8.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--k", type=int, default=6)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--sweep", type=int, nargs="+", default=[250, 500, 1000, 2000, 4000])
    args = ap.parse_args()
    run(Experiment(k=args.k, n_relevant=min(4, args.k), interaction_pairs=min(2, args.k * (args.k - 1) // 2),
                   seed=args.seed, repeats=args.repeats, sweep=args.sweep))


if __name__ == "__main__":
    main()
