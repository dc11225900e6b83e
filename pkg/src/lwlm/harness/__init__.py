"""Configuration, training/evaluation pipelines, metrics and the CLI."""

from .config import RunConfig, build_config, desk_encoder, desk_scene, paper_encoder, profile_defaults
from .metrics import ErrorReport, error_cdf, percentile
from .splits import Split, label_budget_split, split_sizes

__all__ = [
    "RunConfig", "build_config", "desk_encoder", "desk_scene", "paper_encoder", "profile_defaults",
    "ErrorReport", "error_cdf", "percentile", "Split", "label_budget_split", "split_sizes",
]
