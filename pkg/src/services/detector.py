"""
Detector Service - Single-Batch Contrastive-Loss Monitoring

Flow:
1. build_reference(): sample the clean model's contrastive loss over many
   independently drawn and augmented batches -> l_c, sigma_c
2. detect(): measure l_d on fresh batches and flag the model as attacked
   when |l_d - l_c| > delta

Sampling is forward-only and fans out over a thread pool; results are
collected in submission order so they do not depend on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any

import numpy as np
from pydantic import BaseModel, Field, model_validator

from src.config import config_hash, settings
from src.core.errors import DetectionError
from src.core.seeding import substream
from src.core.tensor import no_grad
from src.models.network import Model, classify, encode, project
from src.observability.logger import get_logger
from src.observability.metrics import metrics_collector
from src.observability.tracer import trace_operation
from src.services.augmentation import AugmentationConfig, augment_pair
from src.services.contrastive import LossConfig, contrastive_loss
from src.services.datasets import Dataset

logger = get_logger(__name__, component="detector")

MIN_VALID_SAMPLES = 30


class DetectConfig(BaseModel):
    """Sampling and threshold settings for reference building and detection."""

    n_samples: int = Field(default=1000, ge=1)
    batch: int = Field(default=64, ge=2)
    n_batches: int = Field(default=1, ge=1)
    delta: float | None = Field(default=None, gt=0.0)
    seed: int = 0
    workers: int | None = Field(default=None, ge=1)


class ReferenceProfile(BaseModel):
    """Clean-model loss statistics plus the configs they were measured under."""

    l_c: float
    sigma_c: float = Field(ge=0.0)
    n_samples: int = Field(ge=1)
    batch: int
    seed: int
    loss_cfg_hash: str
    aug_cfg_hash: str
    loss_cfg: LossConfig
    aug_cfg: AugmentationConfig

    @property
    def is_valid(self) -> bool:
        return self.n_samples >= MIN_VALID_SAMPLES

    def default_delta(self) -> float:
        """max(3 * sigma_c, 0.05 * |l_c|)."""
        return max(3.0 * self.sigma_c, 0.05 * abs(self.l_c))

    def to_dict(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ReferenceProfile:
        return cls.model_validate(data)


class DetectionVerdict(BaseModel):
    """Outcome of one detection: attacked == |l_d - l_c| > delta."""

    l_d: float
    l_c: float
    delta: float = Field(gt=0.0)
    attacked: bool
    batches_used: int = Field(ge=1)

    @model_validator(mode="after")
    def _consistent(self) -> DetectionVerdict:
        if self.attacked != (abs(self.l_d - self.l_c) > self.delta):
            raise ValueError("attacked flag disagrees with |l_d - l_c| > delta")
        return self

    @classmethod
    def decide(cls, l_d: float, l_c: float, delta: float, batches_used: int) -> DetectionVerdict:
        return cls(
            l_d=l_d,
            l_c=l_c,
            delta=delta,
            attacked=abs(l_d - l_c) > delta,
            batches_used=batches_used,
        )


@dataclass
class InferenceResult:
    """Contrastive loss and classifier output from one shared encoder pass."""

    loss: float
    logits: np.ndarray

    @property
    def predictions(self) -> np.ndarray:
        return self.logits.argmax(axis=1)


def detect_with_inference(
    model: Model,
    batch: np.ndarray,
    aug_cfg: AugmentationConfig,
    loss_cfg: LossConfig,
    batch_index: int = 0,
) -> InferenceResult:
    """
    Forward-only pass where view a's embedding feeds both the classifier and
    the projection head, so detection rides along with inference.

    Raises:
        DetectionError: fewer than 2 images
    """
    if len(batch) < 2:
        raise DetectionError(f"detection needs a batch of at least 2 images, got {len(batch)}")
    pair = augment_pair(batch, aug_cfg, batch_index)
    with no_grad():
        h_a = encode(model, pair.view_a)
        logits = classify(model, h_a)
        z_a = project(model, h_a)
        z_b = project(model, encode(model, pair.view_b))
        loss = contrastive_loss(z_a, z_b, loss_cfg).item()
    return InferenceResult(loss, logits.data.copy())


def sample_loss(
    model: Model,
    batch: np.ndarray,
    aug_cfg: AugmentationConfig,
    loss_cfg: LossConfig,
    batch_index: int = 0,
) -> float:
    """Contrastive loss of one unlabeled batch; never touches model parameters."""
    return detect_with_inference(model, batch, aug_cfg, loss_cfg, batch_index).loss


def _pool(data: Dataset | np.ndarray) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.as_float()
    return np.asarray(data, dtype=np.float32)


def loss_samples(
    model: Model,
    data: Dataset | np.ndarray,
    n_samples: int,
    batch: int,
    aug_cfg: AugmentationConfig,
    loss_cfg: LossConfig,
    seed: int,
    workers: int | None = None,
) -> np.ndarray:
    """
    Losses of n_samples batches. Sample i draws its images from the
    substream (seed, "detect", i) and augments with batch index i.

    Raises:
        DetectionError: the pool holds fewer images than one batch
    """
    images = _pool(data)
    if len(images) < batch:
        raise DetectionError(f"pool of {len(images)} images is smaller than one batch of {batch}")

    def one(i: int) -> float:
        idx = substream(seed, "detect", i).choice(len(images), size=batch, replace=False)
        return sample_loss(model, images[np.sort(idx)], aug_cfg, loss_cfg, batch_index=i)

    with ThreadPoolExecutor(max_workers=workers or settings.workers) as pool:
        values = list(pool.map(one, range(n_samples)))
    result = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(result)):
        raise DetectionError("non-finite contrastive loss sampled")
    return result


def build_reference(
    model: Model,
    unlabeled_data: Dataset | np.ndarray,
    cfg: DetectConfig | None = None,
    aug_cfg: AugmentationConfig | None = None,
    loss_cfg: LossConfig | None = None,
) -> ReferenceProfile:
    """
    Mean and population standard deviation of the clean model's loss over
    cfg.n_samples batches.
    """
    cfg = cfg or DetectConfig()
    aug_cfg = aug_cfg or AugmentationConfig()
    loss_cfg = loss_cfg or LossConfig()
    with (
        trace_operation("detector.build_reference", {"n_samples": cfg.n_samples}),
        metrics_collector.stage("detector.build_reference"),
    ):
        samples = loss_samples(
            model, unlabeled_data, cfg.n_samples, cfg.batch, aug_cfg, loss_cfg, cfg.seed, cfg.workers
        )

    profile = ReferenceProfile(
        l_c=float(samples.mean()),
        sigma_c=float(samples.std()),
        n_samples=cfg.n_samples,
        batch=cfg.batch,
        seed=cfg.seed,
        loss_cfg_hash=config_hash(loss_cfg),
        aug_cfg_hash=config_hash(aug_cfg),
        loss_cfg=loss_cfg,
        aug_cfg=aug_cfg,
    )
    if not profile.is_valid:
        logger.warning("Reference built from few samples", n_samples=cfg.n_samples)
    logger.info("Reference built", l_c=round(profile.l_c, 5), sigma_c=round(profile.sigma_c, 5))
    return profile


def detect(
    profile: ReferenceProfile,
    model: Model,
    data: Dataset | np.ndarray,
    delta: float | None = None,
    n_batches: int = 1,
    seed: int = 1,
    workers: int | None = None,
) -> DetectionVerdict:
    """
    Compare the mean loss of n_batches fresh batches against the reference.

    Args:
        delta: Tolerance; defaults to profile.default_delta()

    Raises:
        DetectionError: delta <= 0 or n_batches < 1
    """
    delta = profile.default_delta() if delta is None else delta
    if delta <= 0:
        raise DetectionError(f"delta must be positive, got {delta}")
    if n_batches < 1:
        raise DetectionError(f"n_batches must be at least 1, got {n_batches}")

    with (
        trace_operation("detector.detect", {"n_batches": n_batches}),
        metrics_collector.stage("detector.detect"),
    ):
        samples = loss_samples(
            model, data, n_batches, profile.batch, profile.aug_cfg, profile.loss_cfg, seed, workers
        )
    verdict = DetectionVerdict.decide(float(samples.mean()), profile.l_c, delta, n_batches)
    logger.info(
        "Detection finished",
        l_d=round(verdict.l_d, 5),
        l_c=round(verdict.l_c, 5),
        delta=round(delta, 5),
        attacked=verdict.attacked,
    )
    return verdict
