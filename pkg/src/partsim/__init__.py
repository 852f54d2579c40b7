"""Partition-based neural graph similarity plus a classical GED toolkit."""

__version__ = "0.1.0"

from .dataset import Dataset, Split, build_ba_dataset, load_dataset, save_dataset, split_dataset
from .ged import UNIT_COSTS, GedResult, beam_ged, bipartite_ged, exact_ged_astar, nged_similarity
from .graphs import Graph, GraphFormatError, load_graph, save_graph
from .metrics import EvalReport, kendall, mae, mse, precision_at_k, spearman
from .model import ModelConfig, SimilarityModel, load_params, save_params, variant_config
from .partition import PartitionResult, fluidc
from .training import TrainConfig, TrainResult, evaluate, train

__all__ = [
    "Dataset",
    "EvalReport",
    "GedResult",
    "Graph",
    "GraphFormatError",
    "ModelConfig",
    "PartitionResult",
    "SimilarityModel",
    "Split",
    "TrainConfig",
    "TrainResult",
    "UNIT_COSTS",
    "beam_ged",
    "bipartite_ged",
    "build_ba_dataset",
    "evaluate",
    "exact_ged_astar",
    "fluidc",
    "kendall",
    "load_dataset",
    "load_graph",
    "load_params",
    "mae",
    "mse",
    "nged_similarity",
    "precision_at_k",
    "save_dataset",
    "save_graph",
    "save_params",
    "spearman",
    "split_dataset",
    "train",
    "variant_config",
    "__version__",
]
