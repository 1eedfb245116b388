"""Sentence embeddings trained with self-contrastive decorrelation."""
from .estimator import SCDEmbedder
from .evaluation import LabeledSet, QualityReport, StsPairSet, evaluate
from .objective import Hyperparams, joint_loss
from .trainer import Checkpoint, TrainConfig, load_checkpoint, save_checkpoint, train

__all__ = [
    "SCDEmbedder",
    "Checkpoint",
    "Hyperparams",
    "LabeledSet",
    "QualityReport",
    "StsPairSet",
    "TrainConfig",
    "evaluate",
    "joint_loss",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]

__version__ = "0.1.0"
