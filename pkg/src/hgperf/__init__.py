"""Algorithm performance prediction with heterogeneous graph neural networks."""

from .hetgraph import GraphSpec, HeteroGraph, NodeType, Relation, add_reverse_relations, validate_metagraph
from .ingest import Dataset, TargetTransform, build_graph
from .model import Hyperparams, init_model, model_forward
from .train import TrainConfig, make_cv_plan, nested_cv, train_model

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GraphSpec",
    "HeteroGraph",
    "Hyperparams",
    "NodeType",
    "Relation",
    "TargetTransform",
    "TrainConfig",
    "add_reverse_relations",
    "build_graph",
    "init_model",
    "make_cv_plan",
    "model_forward",
    "nested_cv",
    "train_model",
    "validate_metagraph",
]
