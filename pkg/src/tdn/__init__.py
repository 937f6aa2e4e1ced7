"""Temporal dependency networks: learned frame affinities, temporally constrained
normalized cuts, graph convolutions and multilevel pooling for sequence labelling."""

from .model import TDNConfig, TDNModel, forward, init_model, train
from .structure import Partition, recursive_partition, target_subgraph_count

__all__ = [
    "Partition",
    "TDNConfig",
    "TDNModel",
    "forward",
    "init_model",
    "recursive_partition",
    "target_subgraph_count",
    "train",
]
