"""
ContrastGuard - Services

Training, detection and recovery built on the model package:
- Datasets: CIFAR-10 binary format and synthetic blobs
- Augmentation and contrastive loss
- Training: Phase (a) contrastive, Phase (b) classifier
- Detector: reference profile and single-batch detection
- Recovery: retraining with three stopping criteria
"""

from src.services.augmentation import AugmentationConfig, ContrastiveBatch, augment_pair
from src.services.contrastive import LossConfig, contrastive_loss, cosine_sim
from src.services.datasets import (
    Dataset,
    load_cifar10,
    make_synthetic_blobs,
    save_cifar10,
)
from src.services.detector import (
    DetectConfig,
    DetectionVerdict,
    ReferenceProfile,
    build_reference,
    detect,
    detect_with_inference,
    loss_samples,
    sample_loss,
)
from src.services.recovery import (
    RecoveryConfig,
    RecoveryReport,
    detect_and_recover,
    recover,
)
from src.services.training import OptimizerConfig, TrainLog, train_phase_a, train_phase_b

__all__ = [
    "AugmentationConfig",
    "ContrastiveBatch",
    "Dataset",
    "DetectConfig",
    "DetectionVerdict",
    "LossConfig",
    "OptimizerConfig",
    "RecoveryConfig",
    "RecoveryReport",
    "ReferenceProfile",
    "TrainLog",
    "augment_pair",
    "build_reference",
    "contrastive_loss",
    "cosine_sim",
    "detect",
    "detect_and_recover",
    "detect_with_inference",
    "load_cifar10",
    "loss_samples",
    "make_synthetic_blobs",
    "recover",
    "sample_loss",
    "save_cifar10",
    "train_phase_a",
    "train_phase_b",
]
