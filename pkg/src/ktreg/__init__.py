"""ktreg: interaction-sequence augmentation and regularization for
knowledge-tracing models."""

from .augment import AugmentConfig, delete, derive_seed, insert, replace
from .core import (
    AugmentedSequence,
    Dataset,
    Interaction,
    InteractionSequence,
    PredictionTrace,
    SkillMap,
    check_augmented,
    validate_sequence,
    window,
)
from .losses import LossWeights
from .model import DktParams, forward, xavier_init
from .train import AugSpec, TrainConfig, train_run

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "AugmentedSequence",
    "AugSpec",
    "Dataset",
    "DktParams",
    "Interaction",
    "InteractionSequence",
    "LossWeights",
    "PredictionTrace",
    "SkillMap",
    "TrainConfig",
    "check_augmented",
    "delete",
    "derive_seed",
    "forward",
    "insert",
    "replace",
    "train_run",
    "validate_sequence",
    "window",
    "xavier_init",
    "__version__",
]
