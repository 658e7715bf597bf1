"""End-to-end recommendation: retrieve neighbors, fit the surrogate, attribute, report."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterator, Optional

import numpy as np

from metashap.attribution import AttributionResult, InteractionMatrix, default_background, global_attribution
from metashap.errors import MetaShapError
from metashap.insights import MIN_INTERACTION, TuningReport, build_report
from metashap.kb import KnowledgeBase
from metashap.metafeatures import MetaFeatureVector
from metashap.retrieval import MetaDataset, Neighborhood, build_meta_dataset, knn, normalize
from metashap.space import decode
from metashap.surrogate import SurrogateModel, fit


class StageError(MetaShapError):
    """Wraps a failure with the name of the pipeline stage it came from."""

    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str) -> Iterator[None]:
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class PipelineConfig:
    k_neighbors: int = 5
    top_m: int = 3
    seed: int = 42
    n_trees: int = 100
    background_size: int = 256
    explain_size: int = 512
    window_fraction: float = 0.05
    tau: float = 0.5
    n_permutations: int = 1000
    interaction_threshold: Optional[float] = None
    min_interaction: float = MIN_INTERACTION

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class Recommendation:
    report: TuningReport
    attribution: AttributionResult
    interactions: InteractionMatrix
    neighborhood: Neighborhood
    meta_dataset: MetaDataset
    model: SurrogateModel


def recommend(
    kb: KnowledgeBase,
    query: MetaFeatureVector,
    algorithm_id: str,
    config: Optional[PipelineConfig] = None,
    *,
    exclude: Optional[str] = None,
    dataset_label: str = "",
) -> Recommendation:
    """Tuning report for ``algorithm_id`` on the dataset described by ``query``.

    ``exclude`` drops a registry entry from the neighbor search, e.g. the query's own id.
    """
    cfg = config or PipelineConfig()
    with stage("retrieval"):
        _, stats = normalize(kb.meta_registry)
        nbhd = knn(query, kb.meta_registry, stats, cfg.k_neighbors, exclude=exclude)
        meta = build_meta_dataset(kb, nbhd, algorithm_id)
    with stage("surrogate"):
        model = fit(meta, seed=cfg.seed, n_trees=cfg.n_trees)
    with stage("attribution"):
        background = default_background(meta.X, cfg.background_size, cfg.seed)
        explain = default_background(meta.X, cfg.explain_size, cfg.seed + 1)
        attr, inter = global_attribution(model, background, explain, meta.space.names, cfg.n_permutations, cfg.seed)
    with stage("insights"):
        best = int(np.argmax(meta.y))
        report = build_report(
            attr,
            inter,
            meta.space,
            cfg.top_m,
            cfg.interaction_threshold,
            window_fraction=cfg.window_fraction,
            tau=cfg.tau,
            min_interaction=cfg.min_interaction,
            surrogate_r2=model.holdout_r2,
            algorithm=algorithm_id,
            dataset=dataset_label,
            warm_start=decode(meta.X[best], meta.space),
            provenance={
                "k_neighbors": cfg.k_neighbors,
                "neighbors": nbhd.dataset_ids,
                "seeds": {"surrogate": cfg.seed, "background": cfg.seed, "explain": cfg.seed + 1},
                "n_trees": cfg.n_trees,
                "meta_dataset_rows": len(meta),
                "window_fraction": cfg.window_fraction,
                "tau": cfg.tau,
                "attribution_method": attr.method,
            },
        )
    return Recommendation(report, attr, inter, nbhd, meta, model)
