"""Query-driven community search on heterogeneous information networks."""
from .estimator import CommunitySearch
from .graph import CommunityResult, HeteroGraph, QueryTask, Schema, build_graph, neighbors, validate
from .io import load_dataset, load_graph, save_graph
from .metrics import EvalReport, evaluate, f1, jaccard, nmi
from .model import Checkpoint, ModelConfig, forward, init_params, load_checkpoint, predict, save_checkpoint
from .sampler import sample_block
from .search import SearchConfig, full_search, search
from .synth import SynthConfig, generate
from .trainer import TrainConfig, TrainReport, TrainingError, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "CommunityResult",
    "CommunitySearch",
    "EvalReport",
    "HeteroGraph",
    "ModelConfig",
    "QueryTask",
    "Schema",
    "SearchConfig",
    "SynthConfig",
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "build_graph",
    "evaluate",
    "f1",
    "forward",
    "full_search",
    "generate",
    "init_params",
    "jaccard",
    "load_checkpoint",
    "load_dataset",
    "load_graph",
    "neighbors",
    "nmi",
    "predict",
    "sample_block",
    "save_checkpoint",
    "save_graph",
    "search",
    "train",
    "validate",
]
