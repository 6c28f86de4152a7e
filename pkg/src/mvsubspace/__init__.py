"""Multi-view deep subspace clustering with diversity and universality regularisation."""

from .dataset import MultiViewDataset, SyntheticSpec, generate_synthetic, load_manifest
from .metrics import evaluate
from .trainer import ClusteringResult, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ClusteringResult", "MultiViewDataset", "SyntheticSpec", "TrainConfig",
    "evaluate", "generate_synthetic", "load_manifest", "train",
]
