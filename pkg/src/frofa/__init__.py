"""Frozen feature augmentation (FroFA) for few-shot transfer on cached ViT features.

Modules
-------
feature_store   binary feature caches, NPY import/export, synthetic data, k-shot sampling
core            feature <-> image mapping and :func:`apply_frofa`
augmentations   the twenty image-style operations and their specs
protocols       single, sequential, RA* and TA* pipelines
map_head        attention-pooling head with explicit backward pass
linear_probe    closed-form ridge probe and lambda sweep
trainer         SGD training loop, evaluation and hyperparameter sweeps
cli             ``frofa`` command line tool
"""

from .augmentations import AugmentationSpec
from .core import apply_frofa, feature_to_image, image_to_feature
from .errors import CacheFormatError, FrofaError, TrainingDiverged, ValidationError
from .feature_store import FeatureCache, generate_synthetic, read_cache, sample_few_shot, save_cache
from .protocols import Pipeline, augment_batch, single
from .trainer import SweepGrid, TrainConfig, evaluate_top1, run_sweep, train

__version__ = "0.1.0"

__all__ = [
    "AugmentationSpec",
    "CacheFormatError",
    "FeatureCache",
    "FrofaError",
    "Pipeline",
    "SweepGrid",
    "TrainConfig",
    "TrainingDiverged",
    "ValidationError",
    "apply_frofa",
    "augment_batch",
    "evaluate_top1",
    "feature_to_image",
    "generate_synthetic",
    "image_to_feature",
    "read_cache",
    "run_sweep",
    "sample_few_shot",
    "save_cache",
    "single",
    "train",
]
