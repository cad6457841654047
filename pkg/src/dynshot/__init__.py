"""Few-shot membership classification with per-size graph assembly over shared weights."""

__version__ = "0.1.0"

from .assembly import AssembledModel, ModelCache, SizedBatch, assemble, route_batches
from .data import FeatureDataset, SynthConfig, gen_synthetic, load_features, save_features, split_classes
from .graph import Graph, NodeRef, ParamRegistry, grad_check
from .metric import FArch, predict_prob
from .relational import ClassSet, GArch, unique_pairs
from .trainer import Episode, TrainConfig, evaluate, run_grid, train

__all__ = [
    "AssembledModel", "ClassSet", "Episode", "FArch", "FeatureDataset", "GArch", "Graph",
    "ModelCache", "NodeRef", "ParamRegistry", "SizedBatch", "SynthConfig", "TrainConfig",
    "assemble", "evaluate", "gen_synthetic", "grad_check", "load_features", "predict_prob",
    "route_batches", "run_grid", "save_features", "split_classes", "train", "unique_pairs",
]
