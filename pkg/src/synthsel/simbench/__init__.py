"""Simulation designs, ground truth, metrics, baselines and the experiment runner."""

from .baselines import cpss_baseline, default_q_keep, raw_lasso
from .designs import (DesignKind, DesignSpec, GaussianModel, Link, Scenario, TrueModel,
                      make_design, make_true_model, sample_dataset)
from .graphs import GraphTruth, chain_truth, make_small_world
from .metrics import Metrics, score_selection

__all__ = [
    "DesignKind", "DesignSpec", "GaussianModel", "GraphTruth", "Link", "Metrics", "Scenario",
    "TrueModel", "chain_truth", "cpss_baseline", "default_q_keep", "make_design",
    "make_small_world", "make_true_model", "raw_lasso", "sample_dataset", "score_selection",
]
