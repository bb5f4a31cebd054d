"""Neural graph consensus: graphs of learners that supervise each other through consensus."""

from .graph import Graph, HyperEdge, NodeSpec, Path, enumerate_paths
from .learner import DenseModel, ModelSpec, TrainConfig
from .theory import EnsembleSimConfig, simulate_ensemble

__version__ = "0.1.0"

__all__ = [
    "DenseModel",
    "EnsembleSimConfig",
    "Graph",
    "HyperEdge",
    "ModelSpec",
    "NodeSpec",
    "Path",
    "TrainConfig",
    "enumerate_paths",
    "simulate_ensemble",
]
