"""
Training Service - Contrastive Phase (a) and Classifier Phase (b)

Phase (a) updates the encoder and projection head with the contrastive loss
on unlabeled images; the classifier is never on the tape. Phase (b) freezes
the encoder, computes embeddings once, and fits the FC classifier with
cross-entropy.

Epoch-level functions are exposed so recovery can drive the same loops
under its own stopping criteria.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

from src.core import ops
from src.core.errors import TrainingError
from src.core.optim import SGD, build_optimizer
from src.core.seeding import substream
from src.core.tensor import Tensor, no_grad
from src.models.network import Model, ParameterGroup, classify, encode, project
from src.observability.logger import get_logger
from src.observability.metrics import MetricsTimer, metrics_collector
from src.observability.tracer import trace_operation
from src.services.augmentation import AugmentationConfig, augment_pair
from src.services.contrastive import LossConfig, contrastive_loss
from src.services.datasets import Dataset

logger = get_logger(__name__, component="training")


class OptimizerConfig(BaseModel):
    kind: Literal["sgd", "adam"] = "adam"
    lr: float = Field(default=1e-3, gt=0.0)

    def scaled(self, factor: float) -> OptimizerConfig:
        return self.model_copy(update={"lr": self.lr * factor})


PHASE_A_OPTIMIZER = OptimizerConfig(kind="adam", lr=1e-3)
PHASE_B_OPTIMIZER = OptimizerConfig(kind="adam", lr=5e-3)
# Phase (a) trains these parameter groups; Phase (b) only the classifier
PHASE_A_GROUPS: tuple[ParameterGroup, ...] = ("encoder", "projection_head")


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    wall_ms: float = 0.0


@dataclass
class TrainLog:
    """Per-epoch mean losses of one training phase."""

    phase: str
    records: list[EpochRecord] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [r.mean_loss for r in self.records]

    def __len__(self) -> int:
        return len(self.records)

    def to_csv(self, include_timing: bool = True) -> str:
        """CSV with columns epoch, mean_loss[, wall_ms]."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        header = ["epoch", "mean_loss"] + (["wall_ms"] if include_timing else [])
        writer.writerow(header)
        for r in self.records:
            row = [str(r.epoch), repr(r.mean_loss)]
            if include_timing:
                row.append(f"{r.wall_ms:.3f}")
            writer.writerow(row)
        return buffer.getvalue()


def _float_images(data: Dataset | np.ndarray) -> np.ndarray:
    if isinstance(data, Dataset):
        return data.as_float()
    return np.asarray(data, dtype=np.float32)


def _batches(n: int, batch: int, rng: np.random.Generator, min_size: int) -> list[np.ndarray]:
    order = rng.permutation(n)
    chunks = [order[i : i + batch] for i in range(0, n, batch)]
    return [c for c in chunks if len(c) >= min_size]


def contrastive_epoch(
    model: Model,
    images: np.ndarray,
    optimizer: SGD,
    epoch: int,
    batch: int,
    aug_cfg: AugmentationConfig,
    loss_cfg: LossConfig,
) -> float:
    """One Phase (a) epoch; returns the mean contrastive loss over its batches."""
    chunks = _batches(len(images), batch, substream(aug_cfg.seed, "shuffle", epoch), 2)
    if not chunks:
        raise TrainingError(f"no batch of at least 2 images among {len(images)} images")
    losses = []
    for b, idx in enumerate(chunks):
        pair = augment_pair(images[idx], aug_cfg, batch_index=epoch * len(chunks) + b)
        z_a = project(model, encode(model, pair.view_a))
        z_b = project(model, encode(model, pair.view_b))
        loss = contrastive_loss(z_a, z_b, loss_cfg)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    optimizer.zero_grad()
    return float(np.mean(losses))


def embed(model: Model, images: np.ndarray, batch: int = 256) -> np.ndarray:
    """Encoder outputs without recording a tape."""
    with no_grad():
        parts = [encode(model, images[i : i + batch]).data for i in range(0, len(images), batch)]
    return np.concatenate(parts, axis=0)


def classifier_epoch(
    model: Model,
    features: np.ndarray,
    labels: np.ndarray,
    optimizer: SGD,
    epoch: int,
    batch: int,
    seed: int,
) -> float:
    """One Phase (b) epoch over precomputed embeddings; returns mean cross-entropy."""
    chunks = _batches(len(features), batch, substream(seed, "shuffle-fc", epoch), 1)
    losses = []
    for idx in chunks:
        logits = classify(model, Tensor(features[idx]))
        loss = ops.cross_entropy(logits, labels[idx])
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    optimizer.zero_grad()
    return float(np.mean(losses))


def mean_cross_entropy(model: Model, images: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of the full model on labeled images."""
    with no_grad():
        logits = classify(model, Tensor(embed(model, images)))
        return ops.cross_entropy(logits, labels).item()


def phase_a_optimizer(model: Model, cfg: OptimizerConfig) -> SGD:
    return build_optimizer(model.parameters(PHASE_A_GROUPS), cfg.kind, cfg.lr)


def phase_b_optimizer(model: Model, cfg: OptimizerConfig) -> SGD:
    return build_optimizer(model.parameters(("classifier",)), cfg.kind, cfg.lr)


def train_phase_a(
    model: Model,
    data: Dataset | np.ndarray,
    epochs: int,
    batch: int = 64,
    aug_cfg: AugmentationConfig | None = None,
    loss_cfg: LossConfig | None = None,
    optimizer_cfg: OptimizerConfig = PHASE_A_OPTIMIZER,
) -> TrainLog:
    """
    Contrastive training of the encoder and projection head. Labels, if
    present, are ignored.

    Raises:
        TrainingError: empty dataset or fewer than 2 images
    """
    aug_cfg = aug_cfg or AugmentationConfig()
    loss_cfg = loss_cfg or LossConfig()
    images = _float_images(data)
    log = TrainLog("phase_a")
    if epochs <= 0:
        return log
    if len(images) < 2:
        raise TrainingError(f"phase (a) needs at least 2 images, got {len(images)}")
    if model.quantized:
        logger.info("Releasing quantized views before float training", layers=list(model.quantized))
        model.release_quantization()

    optimizer = phase_a_optimizer(model, optimizer_cfg)
    with trace_operation("train.phase_a", {"epochs": epochs, "images": len(images)}):
        for epoch in range(epochs):
            with MetricsTimer() as timer:
                loss = contrastive_epoch(model, images, optimizer, epoch, batch, aug_cfg, loss_cfg)
            log.records.append(EpochRecord(epoch + 1, loss, timer.duration_ms))
            metrics_collector.record_stage("train.phase_a.epoch", timer.duration_ms)
            logger.info("Phase (a) epoch finished", epoch=epoch + 1, mean_loss=round(loss, 5))
    model.phase = "phase_a"
    return log


def train_phase_b(
    model: Model,
    labeled_data: Dataset | tuple[np.ndarray, np.ndarray],
    epochs: int,
    batch: int = 64,
    optimizer_cfg: OptimizerConfig = PHASE_B_OPTIMIZER,
    seed: int = 0,
) -> TrainLog:
    """
    Fit the classifier with the encoder frozen.

    Raises:
        TrainingError: the data carries no labels
    """
    if isinstance(labeled_data, Dataset):
        if labeled_data.labels is None:
            raise TrainingError("phase (b) needs labeled data")
        images, labels = labeled_data.as_float(), labeled_data.label_array()
    else:
        images, labels = labeled_data
        if labels is None:
            raise TrainingError("phase (b) needs labeled data")
        images = np.asarray(images, dtype=np.float32)
        labels = np.asarray(labels, dtype=np.int64)
    log = TrainLog("phase_b")
    if epochs <= 0:
        return log
    if len(images) == 0:
        raise TrainingError("phase (b) received an empty dataset")
    model.release_quantization(["classifier"])

    features = embed(model, images)
    optimizer = phase_b_optimizer(model, optimizer_cfg)
    with trace_operation("train.phase_b", {"epochs": epochs, "images": len(images)}):
        for epoch in range(epochs):
            with MetricsTimer() as timer:
                loss = classifier_epoch(model, features, labels, optimizer, epoch, batch, seed)
            log.records.append(EpochRecord(epoch + 1, loss, timer.duration_ms))
            metrics_collector.record_stage("train.phase_b.epoch", timer.duration_ms)
            logger.info("Phase (b) epoch finished", epoch=epoch + 1, mean_loss=round(loss, 5))
    model.phase = "phase_b"
    return log
