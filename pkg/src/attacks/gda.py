"""
Gradient-driven tampering toward a target class.

Proximal gradient ascent on the mean target-class logit of the source
images with respect to one layer's weight and bias, with an l2 penalty
l2_coef * ||d||^2 on the modification d:

    candidate = (d - lr * grad) / (1 + 2 * lr * l2_coef)

where grad is the gradient of the negated mean target logit. A candidate is
accepted only if it raises the mean target logit; otherwise lr is halved.
No modification compression is applied.
"""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, Field

from src.attacks.report import (
    AttackReport,
    accuracy_or_none,
    count_changed,
    frozen_embeddings,
    touch,
)
from src.core import ops
from src.core.errors import AttackError
from src.core.tensor import Tensor, no_grad
from src.models.network import Model, classify, encode
from src.observability.logger import LogContext, get_logger
from src.observability.metrics import metrics_collector
from src.observability.tracer import trace_operation

logger = get_logger(__name__, component="attacks")

MIN_LR = 1e-10


class GdaConfig(BaseModel):
    target_class: int = Field(default=0, ge=0)
    lr: float = Field(default=1e-2, gt=0.0)
    l2_coef: float = Field(default=1e-3, ge=0.0)
    max_iters: int = Field(default=500, ge=1)
    layer: str = "classifier"
    seed: int = 0


def gda_attack(
    model: Model,
    source_images: np.ndarray,
    cfg: GdaConfig | None = None,
    eval_images: np.ndarray | None = None,
    eval_labels: np.ndarray | None = None,
) -> AttackReport:
    """
    Push cfg.layer's parameters (in place) so source_images classify as
    cfg.target_class. Non-convergence is reported, not raised.

    Raises:
        AttackError: invalid target class or empty source set
    """
    cfg = cfg or GdaConfig()
    if not 0 <= cfg.target_class < model.num_classes:
        raise AttackError(f"target_class {cfg.target_class} outside 0..{model.num_classes - 1}")
    images = np.asarray(source_images, dtype=np.float32)
    if len(images) == 0:
        raise AttackError("GDA needs at least one source image")
    layer = model.layer(cfg.layer)
    model.release_quantization([cfg.layer])
    params = layer.parameters()
    originals = [p.data.copy() for p in params]
    deltas = [np.zeros_like(o, dtype=np.float64) for o in originals]
    features = frozen_embeddings(model, images) if cfg.layer == "classifier" else None

    def logits() -> Tensor:
        if features is not None:
            return classify(model, features)
        return classify(model, encode(model, images))

    def install(candidate: list[np.ndarray]) -> None:
        for p, o, d in zip(params, originals, candidate, strict=True):
            p.assign(o + d)

    def objective() -> tuple[float, bool]:
        with no_grad():
            out = logits().data
        return float(out[:, cfg.target_class].mean()), bool(
            np.all(out.argmax(axis=1) == cfg.target_class)
        )

    acc_before = accuracy_or_none(model, eval_images, eval_labels)
    current, done = objective()
    trajectory = [current]
    lr = cfg.lr
    iterations = 0
    stop_reason = "target_reached" if done else "max_iters"

    with (
        LogContext(attack="gda"),
        trace_operation("attack.gda", {"layer": cfg.layer}),
        metrics_collector.stage("attack.gda"),
    ):
        while not done and iterations < cfg.max_iters:
            iterations += 1
            model.zero_grad()
            out = logits()
            loss = ops.neg(ops.mean(out[:, cfg.target_class]))
            loss.backward()
            grads = [p.grad.astype(np.float64) for p in params]
            model.zero_grad()

            shrink = 1.0 + 2.0 * lr * cfg.l2_coef
            candidate = [(d - lr * g) / shrink for d, g in zip(deltas, grads, strict=True)]
            install(candidate)
            value, reached = objective()
            if value > current:
                deltas, current, done = candidate, value, reached
                trajectory.append(value)
            else:
                install(deltas)
                lr /= 2.0
                if lr < MIN_LR:
                    stop_reason = "step_underflow"
                    break
        if done:
            stop_reason = "target_reached"
    install(deltas)

    modified = sum(count_changed(o, p.data) for o, p in zip(originals, params, strict=True))
    logger.info(
        "GDA finished",
        success=done,
        iterations=iterations,
        target_logit=round(current, 5),
        params_modified=modified,
    )
    return AttackReport(
        attack_kind="gda",
        layers_touched=[touch(model, cfg.layer)],
        params_modified=modified,
        acc_before=acc_before,
        acc_after=accuracy_or_none(model, eval_images, eval_labels),
        iterations=iterations,
        success=done,
        stop_reason=stop_reason,
        trajectory=trajectory,
        seed=cfg.seed,
    )
