"""Dataset-aware hyperparameter importance from a meta-knowledge base.

Pipeline: meta-features -> nearest datasets -> forest surrogate -> Shapley
attributions -> tuning report -> (optionally) restricted Bayesian optimisation.
"""

from metashap.errors import LoadError, MetaShapError, ValidationError
from metashap.pipeline import PipelineConfig, recommend

__all__ = ["LoadError", "MetaShapError", "PipelineConfig", "ValidationError", "recommend"]
__version__ = "0.1.0"
