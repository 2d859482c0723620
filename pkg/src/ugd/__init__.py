"""Unified Gaussian dense-anchoring for few-shot partial multi-view data."""

from .data import (
    Episode,
    MultiViewDataset,
    MultiViewSample,
    ViewSpec,
    apply_view_missing,
    gen_synthetic_dataset,
    load_features,
    missing_rate,
    sample_episode,
    save_dataset,
)
from .estimate import build_anchor_batch
from .harness import ExperimentConfig, emit_report, run_episode, run_sweep
from .stats import BaseStats, compute_base_stats, load_stats, save_stats

__all__ = [
    "Episode",
    "MultiViewDataset",
    "MultiViewSample",
    "ViewSpec",
    "apply_view_missing",
    "gen_synthetic_dataset",
    "load_features",
    "missing_rate",
    "sample_episode",
    "save_dataset",
    "build_anchor_batch",
    "ExperimentConfig",
    "emit_report",
    "run_episode",
    "run_sweep",
    "BaseStats",
    "compute_base_stats",
    "load_stats",
    "save_stats",
]
