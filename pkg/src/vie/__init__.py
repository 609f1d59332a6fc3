"""Imbalanced event classification with heavy-tailed latent variables."""
from .errors import CheckpointError, ContractError, DomainError, NumericError, TrainingError
from .trainer import (PRESETS, TrainConfig, TrainedModel, VariantSpec, checkpoint_load,
                      checkpoint_save, predict, preset, train, train_step)

__version__ = "0.1.0"

__all__ = [
    "CheckpointError", "ContractError", "DomainError", "NumericError", "TrainingError",
    "PRESETS", "TrainConfig", "TrainedModel", "VariantSpec", "checkpoint_load",
    "checkpoint_save", "predict", "preset", "train", "train_step",
]
