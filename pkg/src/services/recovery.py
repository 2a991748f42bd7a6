"""
Recovery Service - Retraining After Detection

Unlabeled data: contrastive Phase (a) only. Labeled data: Phase (a) to its
stop, then Phase (b) to its own stop. Each phase stops at the first
satisfied criterion, checked after every epoch in this order:
1. reference_reached: epoch loss <= reference (+ reference_tolerance)
2. plateau: relative improvement < min_rel_improve for `patience` epochs
3. epoch_cap: the phase has run epoch_cap epochs

Phase (a) never touches the classifier, so an attack confined to it is
outside what unlabeled recovery can repair; the report flags this as
in_scope=False when the attacked layers are known.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

from src.core.errors import RecoveryError
from src.models.network import Model, evaluate_accuracy
from src.observability.logger import LogContext, get_logger
from src.observability.metrics import metrics_collector
from src.observability.tracer import trace_operation
from src.services.augmentation import AugmentationConfig
from src.services.contrastive import LossConfig
from src.services.datasets import Dataset
from src.services.detector import DetectConfig, DetectionVerdict, ReferenceProfile, detect
from src.services.training import (
    PHASE_A_OPTIMIZER,
    PHASE_A_GROUPS,
    PHASE_B_OPTIMIZER,
    OptimizerConfig,
    classifier_epoch,
    contrastive_epoch,
    embed,
    phase_a_optimizer,
    phase_b_optimizer,
)

logger = get_logger(__name__, component="recovery")

StopReason = Literal["reference_reached", "plateau", "epoch_cap"]
RECOVERY_LR_SCALE = 0.1


class RecoveryConfig(BaseModel):
    """Budget, stopping criteria and optimizers for recovery."""

    labeled: bool = False
    data_budget: int = Field(default=512, ge=1)
    batch: int = Field(default=64, ge=2)
    epoch_cap: int = Field(default=30, ge=1)
    patience: int = Field(default=3, ge=1)
    min_rel_improve: float = Field(default=1e-3, ge=0.0)
    reference_contrastive: float | None = None
    reference_ce: float | None = None
    reference_tolerance: float = Field(default=0.0, ge=0.0)
    phase_a_optimizer: OptimizerConfig = Field(
        default_factory=lambda: PHASE_A_OPTIMIZER.scaled(RECOVERY_LR_SCALE)
    )
    phase_b_optimizer: OptimizerConfig = Field(
        default_factory=lambda: PHASE_B_OPTIMIZER.scaled(RECOVERY_LR_SCALE)
    )
    aug_cfg: AugmentationConfig = Field(default_factory=AugmentationConfig)
    loss_cfg: LossConfig = Field(default_factory=LossConfig)
    seed: int = 0

    @model_validator(mode="after")
    def _budget_covers_batch(self) -> RecoveryConfig:
        if self.data_budget < self.batch:
            raise ValueError(f"data_budget {self.data_budget} is smaller than batch {self.batch}")
        return self


class RecoveryReport(BaseModel):
    """Accuracies, epochs and stop reasons of one recovery run."""

    acc_before: float | None = None
    acc_after: float | None = None
    acc_after_phase_a: float | None = None
    epochs_used: int
    phase_a_epochs: int
    phase_b_epochs: int = 0
    stop_reason: StopReason
    phase_a_stop: StopReason
    phase_b_stop: StopReason | None = None
    phase_b_run: bool = False
    in_scope: bool | None = None
    phase_a_losses: list[float] = Field(default_factory=list)
    phase_b_losses: list[float] = Field(default_factory=list)

    def trajectory_rows(self) -> list[tuple[str, int, float]]:
        """(phase, epoch, loss) rows for the per-epoch CSV."""
        rows = [("phase_a", i + 1, loss) for i, loss in enumerate(self.phase_a_losses)]
        rows += [("phase_b", i + 1, loss) for i, loss in enumerate(self.phase_b_losses)]
        return rows


def stop_reason_for(
    losses: list[float],
    reference: float | None,
    tolerance: float,
    patience: int,
    min_rel_improve: float,
    epoch_cap: int,
) -> StopReason | None:
    """Criterion satisfied after the last logged epoch, or None to continue."""
    if not losses:
        return None
    current = losses[-1]
    if reference is not None and current <= reference + tolerance:
        return "reference_reached"
    if len(losses) > patience:
        stalled = 0
        for prev, cur in zip(losses[-patience - 1 : -1], losses[-patience:], strict=True):
            rel = (prev - cur) / max(abs(prev), 1e-12)
            stalled = stalled + 1 if rel < min_rel_improve else 0
        if stalled >= patience:
            return "plateau"
    if len(losses) >= epoch_cap:
        return "epoch_cap"
    return None


def _run_phase(
    run_epoch: Callable[[int], float],
    reference: float | None,
    cfg: RecoveryConfig,
    phase: str,
) -> tuple[list[float], StopReason]:
    losses: list[float] = []
    with LogContext(recovery_phase=phase):
        while True:
            losses.append(run_epoch(len(losses)))
            reason = stop_reason_for(
                losses,
                reference,
                cfg.reference_tolerance if phase == "phase_a" else 0.0,
                cfg.patience,
                cfg.min_rel_improve,
                cfg.epoch_cap,
            )
            logger.info("Recovery epoch finished", epoch=len(losses), loss=round(losses[-1], 5))
            if reason is not None:
                logger.info("Recovery phase stopped", epochs=len(losses), stop_reason=reason)
                return losses, reason


def _accuracy(model: Model, evaluation: Dataset | None) -> float | None:
    if evaluation is None or evaluation.labels is None:
        return None
    return evaluate_accuracy(model, evaluation.as_float(), evaluation.label_array())


def retrains_any(attacked_layers: Sequence[str], labeled: bool) -> bool:
    """Whether recovery retrains at least one of the attacked layers."""
    if labeled:
        return True
    return any(name.split(".")[0] in PHASE_A_GROUPS for name in attacked_layers)


def recover(
    model: Model,
    data: Dataset,
    cfg: RecoveryConfig | None = None,
    evaluation: Dataset | None = None,
    attacked_layers: Sequence[str] | None = None,
) -> RecoveryReport:
    """
    Retrain an attacked model in place.

    Args:
        model: Model flagged by detection
        data: Recovery images; the first data_budget are used. Labels are
            read only when cfg.labeled.
        cfg: Recovery configuration
        evaluation: Optional labeled set for the reported accuracies
        attacked_layers: Layers the attack changed, when known; sets the
            report's in_scope flag

    Raises:
        RecoveryError: labels missing for labeled recovery, or fewer images than one batch
    """
    cfg = cfg or RecoveryConfig()
    if cfg.labeled and data.labels is None:
        raise RecoveryError("labeled recovery requested but the data carries no labels")
    budget = data.subset(np.arange(min(len(data), cfg.data_budget)))
    if len(budget) < cfg.batch:
        raise RecoveryError(f"recovery data has {len(budget)} images, fewer than one batch of {cfg.batch}")
    if model.quantized:
        model.release_quantization()

    in_scope = None if attacked_layers is None else retrains_any(attacked_layers, cfg.labeled)
    if in_scope is False:
        logger.warning(
            "Attack confined to layers unlabeled recovery does not retrain",
            attacked_layers=list(attacked_layers or ()),
        )

    images = budget.as_float()
    acc_before = _accuracy(model, evaluation)
    with (
        trace_operation("recovery.recover", {"labeled": cfg.labeled}),
        metrics_collector.stage("recovery.recover"),
    ):
        opt_a = phase_a_optimizer(model, cfg.phase_a_optimizer)
        a_losses, a_stop = _run_phase(
            lambda epoch: contrastive_epoch(
                model, images, opt_a, epoch, cfg.batch, cfg.aug_cfg, cfg.loss_cfg
            ),
            cfg.reference_contrastive,
            cfg,
            "phase_a",
        )
        model.phase = "recovered_phase_a"
        acc_after_a = _accuracy(model, evaluation)

        b_losses: list[float] = []
        b_stop: StopReason | None = None
        if cfg.labeled:
            labels = budget.label_array()
            features = embed(model, images)
            opt_b = phase_b_optimizer(model, cfg.phase_b_optimizer)
            b_losses, b_stop = _run_phase(
                lambda epoch: classifier_epoch(
                    model, features, labels, opt_b, epoch, cfg.batch, cfg.seed
                ),
                cfg.reference_ce,
                cfg,
                "phase_b",
            )
            model.phase = "recovered_phase_b"

    report = RecoveryReport(
        acc_before=acc_before,
        acc_after=_accuracy(model, evaluation) if cfg.labeled else acc_after_a,
        acc_after_phase_a=acc_after_a,
        epochs_used=len(a_losses) + len(b_losses),
        phase_a_epochs=len(a_losses),
        phase_b_epochs=len(b_losses),
        stop_reason=b_stop or a_stop,
        phase_a_stop=a_stop,
        phase_b_stop=b_stop,
        phase_b_run=cfg.labeled,
        in_scope=in_scope,
        phase_a_losses=a_losses,
        phase_b_losses=b_losses,
    )
    logger.info(
        "Recovery finished",
        labeled=cfg.labeled,
        epochs=report.epochs_used,
        stop_reason=report.stop_reason,
        acc_after=report.acc_after,
    )
    return report


def detect_and_recover(
    model: Model,
    detect_data: Dataset | np.ndarray,
    recover_data: Dataset,
    profile: ReferenceProfile,
    delta: float | None = None,
    cfg: RecoveryConfig | None = None,
    detect_cfg: DetectConfig | None = None,
    evaluation: Dataset | None = None,
    attacked_layers: Sequence[str] | None = None,
) -> tuple[DetectionVerdict, RecoveryReport | None]:
    """Detect; recover only when the verdict says the model is attacked."""
    detect_cfg = detect_cfg or DetectConfig()
    verdict = detect(
        profile,
        model,
        detect_data,
        delta=delta if delta is not None else detect_cfg.delta,
        n_batches=detect_cfg.n_batches,
        seed=detect_cfg.seed,
        workers=detect_cfg.workers,
    )
    if not verdict.attacked:
        logger.info("Model is not attacked; recovery skipped")
        return verdict, None
    cfg = cfg or RecoveryConfig()
    if cfg.reference_contrastive is None:
        cfg = cfg.model_copy(
            update={"reference_contrastive": profile.l_c, "reference_tolerance": verdict.delta}
        )
    return verdict, recover(model, recover_data, cfg, evaluation, attacked_layers)
