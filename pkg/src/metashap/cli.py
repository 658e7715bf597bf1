"""Command-line entry point: ingest, metafeatures, recommend, compare, benchgen.

Exit codes: 0 success, 2 validation or load error, 3 any other failure.
Errors are printed to stderr as ``error [<stage>]: <message>``.
"""

from __future__ import annotations

import argparse
import importlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from metashap.benchgen import SyntheticSurface, generate_kb, ground_truth, load_surfaces
from metashap.errors import LoadError, MetaShapError, ValidationError
from metashap.insights import write_range_csvs
from metashap.kb import KBRecord, add_meta_features, append_records, load_kb, write_registry
from metashap.metafeatures import MetaFeatureVector, dataset_from_frame, extract
from metashap.optimizer import BOTrace, Objective, bo_run, guided_bo_run, iterations_to_reach, write_traces
from metashap.pipeline import PipelineConfig, StageError, recommend, stage
from metashap.serialization import attribution_to_dict, write_json

CLI_SCHEMA_VERSION = "metashap-cli/v1"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
# flags that name output locations do not change results and stay out of provenance
_NON_PROVENANCE = {"out", "func"}


@dataclass
class RunConfig:
    subcommand: str
    flags: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        flags = {k: v for k, v in sorted(vars(args).items()) if k not in _NON_PROVENANCE and k != "command"}
        return cls(args.command, flags)

    def provenance(self) -> Dict[str, Any]:
        return {"schema_version": CLI_SCHEMA_VERSION, "subcommand": self.subcommand, "flags": self.flags}


def _positive(kind=int, minimum=1):
    def parse(text: str):
        v = kind(text)
        if v < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}")
        return v

    return parse


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError("must lie in (0, 1]")
    return v


# ----------------------------------------------------------------- helpers


def _load_dataset_vector(path: str, target_col: Optional[str], categorical: Optional[str], seed: int) -> MetaFeatureVector:
    with stage("metafeatures"):
        if not target_col:
            raise ValidationError("--target-col is required together with --dataset")
        import pandas as pd

        if not os.path.isfile(path):
            raise LoadError(f"dataset file {path} not found")
        frame = pd.read_csv(path)
        cats = [c for c in (categorical or "").split(",") if c]
        return extract(dataset_from_frame(frame, target_col, cats), seed=seed)


def _query(args, kb) -> Tuple[MetaFeatureVector, str, Optional[str]]:
    """(query vector, label, id to exclude from retrieval)."""
    if args.query_id:
        with stage("retrieval"):
            if args.query_id not in kb.meta_registry:
                raise ValidationError(f"query id {args.query_id!r} not in the KB registry")
            return kb.meta_registry[args.query_id], args.query_id, args.query_id if args.exclude_query else None
    if not args.dataset:
        raise StageError("metafeatures", ValidationError("one of --dataset or --query-id is required"))
    vec = _load_dataset_vector(args.dataset, args.target_col, args.categorical, args.seed)
    return vec, Path(args.dataset).stem, None


def _pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(
        k_neighbors=args.k_neighbors,
        top_m=args.top_m,
        seed=args.seed,
        n_trees=args.n_trees,
        window_fraction=args.window_fraction,
        tau=args.tau,
        n_permutations=args.n_permutations,
        interaction_threshold=args.interaction_threshold,
    )


def _run_recommend(args):
    with stage("kb"):
        kb = load_kb(args.kb)
    vec, label, exclude = _query(args, kb)
    return recommend(kb, vec, args.algorithm, _pipeline_config(args), exclude=exclude, dataset_label=label)


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report_payload(rec, run: RunConfig) -> Dict[str, Any]:
    d = rec.report.to_dict()
    d["provenance"] = dict(d["provenance"], run=run.provenance())
    return d


# --------------------------------------------------------------- commands


def cmd_benchgen(args) -> int:
    with stage("benchgen"):
        skb = generate_kb(
            args.n_datasets,
            args.configs_per_dataset,
            args.seed,
            k=args.k,
            n_relevant=args.n_relevant,
            interaction_pairs=args.interaction_pairs,
            n_clusters=args.n_clusters,
            noise_sigma=args.noise,
            algorithm_id=args.algorithm,
        )
    with stage("output"):
        skb.save(args.out)
    print(f"wrote {skb.kb.size} records for {len(skb.kb.meta_registry)} datasets to {args.out}")
    return EXIT_OK


def cmd_metafeatures(args) -> int:
    vec = _load_dataset_vector(args.dataset, args.target_col, args.categorical, args.seed)
    with stage("output"):
        did = args.dataset_id or Path(args.dataset).stem
        write_registry(args.out, {did: vec})
    print(f"wrote meta-features for {did} to {args.out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    if not args.records and not args.dataset:
        raise StageError("ingest", ValidationError("nothing to ingest: give --records and/or --dataset"))
    if args.dataset:
        vec = _load_dataset_vector(args.dataset, args.target_col, args.categorical, args.seed)
        with stage("ingest"):
            add_meta_features(args.kb, args.dataset_id or Path(args.dataset).stem, vec)
    if args.records:
        with stage("ingest"):
            recs: List[KBRecord] = []
            with open(args.records) as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        d = json.loads(line)
                        recs.append(KBRecord(d["dataset_id"], d["algorithm_id"], d["config"], d["performance"]))
                    except (json.JSONDecodeError, KeyError, TypeError) as exc:
                        raise ValidationError(f"{args.records} line {lineno}: malformed record ({exc})") from None
            size = append_records(args.kb, recs)
        print(f"appended {len(recs)} records; KB now holds {size}")
    return EXIT_OK


def cmd_recommend(args) -> int:
    run = RunConfig.from_args(args)
    rec = _run_recommend(args)
    with stage("output"):
        out = _out_dir(args.out)
        write_json(out / "report.json", _report_payload(rec, run))
        attr = attribution_to_dict(rec.attribution, rec.interactions, rec.meta_dataset.space)
        attr["provenance"] = run.provenance()
        write_json(out / "attribution.json", attr)
        write_range_csvs(rec.report, rec.attribution, rec.meta_dataset.space, out, args.window_fraction)
    print(f"selected {', '.join(rec.report.selected)}; outputs in {args.out}")
    return EXIT_OK


def _load_objective(args, space) -> Tuple[Callable, Optional[float]]:
    """Objective callable and its analytic optimum when known."""
    if args.surface:
        with open(args.surface) as fh:
            raw = json.load(fh)
        if "space" in raw:
            surf = SyntheticSurface.from_dict(raw)
        else:
            surfaces = load_surfaces(args.surface)
            key = args.target_id or args.query_id
            if key not in surfaces:
                raise ValidationError(f"surface file has no entry {key!r}; pass --target-id")
            surf = surfaces[key]
        if surf.space.names != space.names:
            raise ValidationError("surface space does not match the algorithm's space")
        return surf, ground_truth(surf).optimum_value
    if args.objective:
        mod, _, name = args.objective.partition(":")
        if not name:
            raise ValidationError("--objective must look like module:callable")
        return getattr(importlib.import_module(mod), name), None
    raise ValidationError("compare needs --surface or --objective")


def _median(xs: Sequence[float]) -> float:
    return float(np.median(np.asarray(xs, dtype=float)))


def cmd_compare(args) -> int:
    run = RunConfig.from_args(args)
    rec = _run_recommend(args)
    space = rec.meta_dataset.space
    with stage("optimizer"):
        fn, optimum = _load_objective(args, space)
        vanilla: List[BOTrace] = []
        guided: List[BOTrace] = []
        for r in range(args.runs):
            seed = args.seed + r
            vanilla.append(bo_run(Objective(fn), space, args.budget, args.init, seed))
            guided.append(guided_bo_run(Objective(fn), space, rec.report, args.budget, args.guided_init, seed))
        if optimum is None:
            optimum = max(float(t.best_so_far[-1]) for t in vanilla + guided)
            source = "observed"
        else:
            source = "analytic"
        target = optimum - args.epsilon
        it_v = [iterations_to_reach(t, target) for t in vanilla]
        it_g = [iterations_to_reach(t, target) for t in guided]
        med_v, med_g = _median(it_v), _median(it_g)
        speedup = 1.0 if med_v == med_g else med_v / med_g
    with stage("output"):
        out = _out_dir(args.out)
        write_traces(out / "trace_vanilla.csv", vanilla)
        write_traces(out / "trace_guided.csv", guided)
        write_json(out / "report.json", _report_payload(rec, run))
        write_json(
            out / "summary.json",
            {
                "schema_version": "compare-summary/v1",
                "provenance": run.provenance(),
                "epsilon": args.epsilon,
                "optimum": optimum,
                "optimum_source": source,
                "target": target,
                "modes": {
                    "vanilla": {"best_so_far": [t.best_so_far for t in vanilla], "iterations_to_target": it_v,
                                "median_iterations": med_v},
                    "guided": {"best_so_far": [t.best_so_far for t in guided], "iterations_to_target": it_g,
                               "median_iterations": med_g, "notes": [t.notes for t in guided]},
                },
                "speedup_ratio": speedup,
            },
        )
    print(f"median iterations to within {args.epsilon}: vanilla {med_v:g}, guided {med_g:g} (speedup {speedup:.3g})")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_query_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kb", required=True, help="KB bundle directory")
    p.add_argument("--dataset", help="target dataset CSV")
    p.add_argument("--target-col", help="class column of --dataset")
    p.add_argument("--categorical", help="comma-separated columns of --dataset to treat as categorical")
    p.add_argument("--query-id", help="use a registry dataset's meta-features as the query instead of --dataset")
    p.add_argument("--exclude-query", action="store_true", help="drop --query-id itself from the neighbors")
    p.add_argument("--algorithm", required=True)
    p.add_argument("--k-neighbors", type=_positive(), default=5)
    p.add_argument("--top-m", type=_positive(), default=3)
    p.add_argument("--n-trees", type=_positive(), default=100)
    p.add_argument("--window-fraction", type=_fraction, default=0.05)
    p.add_argument("--tau", type=_fraction, default=0.5)
    p.add_argument("--n-permutations", type=_positive(int, 100), default=1000)
    p.add_argument("--interaction-threshold", type=float, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metashap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("benchgen", help="write a synthetic KB bundle with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--n-datasets", type=_positive(int, 2), default=10)
    p.add_argument("--configs-per-dataset", type=_positive(), default=400)
    p.add_argument("--k", type=_positive(), default=8, help="number of hyperparameters")
    p.add_argument("--n-relevant", type=_positive(), default=3)
    p.add_argument("--interaction-pairs", type=_positive(int, 0), default=0)
    p.add_argument("--n-clusters", type=_positive(), default=2)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--algorithm", default="synthetic")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_benchgen)

    p = sub.add_parser("metafeatures", help="extract the meta-feature vector of a CSV dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target-col")
    p.add_argument("--categorical")
    p.add_argument("--dataset-id")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="output CSV in registry format")
    p.set_defaults(func=cmd_metafeatures)

    p = sub.add_parser("ingest", help="append records and/or a dataset's meta-features to a KB bundle")
    p.add_argument("--kb", required=True)
    p.add_argument("--records", help="JSONL file of new records")
    p.add_argument("--dataset")
    p.add_argument("--target-col")
    p.add_argument("--categorical")
    p.add_argument("--dataset-id")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("recommend", help="importance ranking and tuning ranges for a dataset")
    _add_query_flags(p)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("compare", help="vanilla vs guided BO on an objective")
    _add_query_flags(p)
    p.add_argument("--surface", help="surface JSON (single surface or benchgen surfaces.json)")
    p.add_argument("--target-id", help="entry of a surfaces.json to optimise (default: --query-id)")
    p.add_argument("--objective", help="module:callable taking a config dict and returning a score in [0, 1]")
    p.add_argument("--budget", type=_positive(int, 2), default=30)
    p.add_argument("--init", type=_positive(int, 2), default=5)
    p.add_argument("--guided-init", type=_positive(int, 0), default=3)
    p.add_argument("--runs", type=_positive(), default=1, help="paired seeds seed, seed+1, ...")
    p.add_argument("--epsilon", type=float, default=0.02)
    p.set_defaults(func=cmd_compare)
    return parser


def _exit_code(exc: BaseException) -> int:
    return EXIT_VALIDATION if isinstance(exc, (ValidationError, LoadError)) else EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc.cause}", file=sys.stderr)
        return _exit_code(exc.cause)
    except MetaShapError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except Exception as exc:  # noqa: BLE001  last-resort reporting for the exit-code contract
        print(f"error [{args.command}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
