"""Trainable MRI / functional image fusion with invertible feature extractors."""
from .data import ImagePair, crop_augment, load_manifest, load_pair
from .estimator import FusionEstimator
from .loss import AdaptiveWeights, compute_weights, total_loss
from .metrics import METRIC_NAMES, MetricReport, evaluate
from .model import FusionNet, ModelConfig, build_model, count_parameters, fuse, fuse_full
from .trainer import TrainConfig, load_checkpoint, load_model, save_checkpoint, train, train_step

__version__ = "0.1.0"

__all__ = [
    "AdaptiveWeights", "FusionEstimator", "FusionNet", "ImagePair", "METRIC_NAMES",
    "MetricReport", "ModelConfig", "TrainConfig", "build_model", "compute_weights",
    "count_parameters", "crop_augment", "evaluate", "fuse", "fuse_full", "load_checkpoint",
    "load_manifest", "load_model", "load_pair", "save_checkpoint", "total_loss", "train",
    "train_step",
]
