"""Structured integrative learning: graph-guided latent group penalties for multiple datasets."""

from .graph import PredictorGraph, from_edge_list, neighborhoods, group_weights, remove_edges_random
from .penalty import Inner, Outer, PenaltyConfig
from .solver import FitResult, MultiStudy, SolverOptions, fit, lambda_max
from .estimators import ModelSpec, TuningGrid, grid_search, make_preset, preset_names
from .simgen import Scenario, ScenarioConfig, sample_study

__version__ = "0.1.0"

__all__ = [
    "PredictorGraph", "from_edge_list", "neighborhoods", "group_weights", "remove_edges_random",
    "Inner", "Outer", "PenaltyConfig", "FitResult", "MultiStudy", "SolverOptions", "fit", "lambda_max",
    "ModelSpec", "TuningGrid", "grid_search", "make_preset", "preset_names",
    "Scenario", "ScenarioConfig", "sample_study",
]
