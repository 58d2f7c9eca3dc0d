"""Training engine for music-genre classifiers on precomputed audio embeddings."""

from .data import EmbeddingDataset, make_cluster_dataset, merge_label_spaces
from .losses import (ContrastiveParams, MultitaskConfig, PairBatch,
                     TripletBatch, TripletParams, contrastive, cross_entropy,
                     triplet)
from .network import (Activation, HeadConfig, HeadRole, Mode, Network,
                      NetworkConfig, load_checkpoint, save_checkpoint)
from .report import EvalReport, SweepSpec, evaluate, run_sweep
from .sampler import EpochPlan, NoiseConfig, add_noise
from .tensor import Rng
from .trainer import DataSplits, TrainConfig, grad_check, train

__version__ = "0.1.0"

__all__ = [
    "Activation", "ContrastiveParams", "DataSplits", "EmbeddingDataset",
    "EpochPlan", "EvalReport", "HeadConfig", "HeadRole", "Mode",
    "MultitaskConfig", "Network", "NetworkConfig", "NoiseConfig", "PairBatch",
    "Rng", "SweepSpec", "TrainConfig", "TripletBatch", "TripletParams",
    "add_noise", "contrastive", "cross_entropy", "evaluate", "grad_check",
    "load_checkpoint", "make_cluster_dataset", "merge_label_spaces",
    "run_sweep", "save_checkpoint", "train", "triplet",
]
