#!/usr/bin/env python
"""Paired vanilla and guided BO runs on synthetic surfaces with a known optimum.

    python scripts/guided_vs_vanilla.py --seeds 20 --out results/bo
"""

import argparse
import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from metashap.benchgen import generate_kb
from metashap.optimizer import Objective, bo_run, guided_bo_run, iterations_to_reach, write_traces
from metashap.pipeline import PipelineConfig, recommend


@dataclass
class Experiment:
    seeds: int = 20
    k: int = 8
    n_relevant: int = 2
    noise: float = 0.01
    budget: int = 30
    init: int = 5
    guided_init: int = 3
    epsilon: float = 0.02
    query: str = "d00"
    k_neighbors: int = 4


def run(exp: Experiment, out: Path = None):
    summary = {"config": asdict(exp), "runs": []}
    vanilla_all, guided_all = [], []
    for seed in range(exp.seeds):
        t0 = time.perf_counter()
        skb = generate_kb(10, 400, seed, k=exp.k, n_relevant=exp.n_relevant, noise_sigma=exp.noise)
        rec = recommend(skb.kb, skb.kb.meta_registry[exp.query], skb.algorithm_id,
                        PipelineConfig(k_neighbors=exp.k_neighbors), exclude=exp.query)
        surface, gt = skb.surfaces[exp.query], skb.truths[exp.query]
        space = rec.meta_dataset.space
        v = bo_run(Objective(surface), space, exp.budget, exp.init, seed)
        g = guided_bo_run(Objective(surface), space, rec.report, exp.budget, exp.guided_init, seed)
        vanilla_all.append(v)
        guided_all.append(g)
        target = gt.optimum_value - exp.epsilon
        run = {
            "seed": seed,
            "optimum": gt.optimum_value,
            "selected": list(rec.report.selected),
            "vanilla_iterations": iterations_to_reach(v, target),
            "guided_iterations": iterations_to_reach(g, target),
            "guided_first_gap": gt.optimum_value - float(g.best_so_far[0]),
            "seconds": time.perf_counter() - t0,
        }
        summary["runs"].append(run)
        print(f"seed {seed:2d}  vanilla {run['vanilla_iterations']:2d}  guided {run['guided_iterations']:2d}  "
              f"first gap {run['guided_first_gap']:.4f}")
    med_v = float(np.median([r["vanilla_iterations"] for r in summary["runs"]]))
    med_g = float(np.median([r["guided_iterations"] for r in summary["runs"]]))
    summary["median_vanilla"], summary["median_guided"] = med_v, med_g
    summary["ratio"] = med_g / med_v
    print(f"median iterations: vanilla {med_v:g}, guided {med_g:g}, ratio {med_g / med_v:.3f}")
    if out:
        out.mkdir(parents=True, exist_ok=True)
        write_traces(out / "trace_vanilla.csv", vanilla_all)
        write_traces(out / "trace_guided.csv", guided_all)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    for name, value in asdict(Experiment()).items():
        ap.add_argument(f"--{name.replace('_', '-')}", type=type(value), default=value)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()
    run(Experiment(**{k: getattr(args, k) for k in asdict(Experiment())}), args.out)


if __name__ == "__main__":
    main()
