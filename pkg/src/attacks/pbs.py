"""
Progressive bit search on quantized weights.

Each iteration:
1. in-layer search: rank every (weight, bit) of each quantized layer by the
   first-order loss increase grad * delta_w, trial-flip the top trial_k and
   keep the flip with the highest attack-batch cross-entropy
2. cross-layer search: commit the best of the per-layer winners, only if it
   strictly raises the loss

Stops when held-out accuracy drops below target_acc, no flip raises the
loss, or max_iters flips have been committed.
"""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, Field

from src.attacks.report import AttackReport, accuracy_or_none, batch_loss, touch
from src.core import ops
from src.core.errors import AttackError
from src.models.network import Model, classify, encode
from src.models.quantization import BITS, QuantizedLayerView, bit_delta, flip_bit
from src.observability.logger import LogContext, get_logger
from src.observability.metrics import metrics_collector
from src.observability.tracer import trace_operation

logger = get_logger(__name__, component="attacks")


class PbsConfig(BaseModel):
    target_acc: float = Field(default=0.11, ge=0.0, le=1.0)
    trial_k: int = Field(default=10, ge=1)
    max_iters: int = Field(default=50, ge=1)
    layers: list[str] | None = None
    seed: int = 0


def _gradients(model: Model, images: np.ndarray, labels: np.ndarray) -> float:
    model.zero_grad()
    loss = ops.cross_entropy(classify(model, encode(model, images)), labels)
    loss.backward()
    return loss.item()


def _candidates(view: QuantizedLayerView, trial_k: int) -> list[tuple[int, int]]:
    grad = view.weight.grad
    if grad is None:
        return []
    g = grad.reshape(-1).astype(np.float32)
    scores = np.stack([g * bit_delta(view, bit) for bit in range(BITS)])
    flat = scores.reshape(-1)
    k = min(trial_k, flat.size)
    top = np.argsort(-flat, kind="stable")[:k]
    return [(int(i % view.size), int(i // view.size)) for i in top]


def _in_layer_search(
    model: Model,
    view: QuantizedLayerView,
    images: np.ndarray,
    labels: np.ndarray,
    trial_k: int,
) -> tuple[float, int, int] | None:
    best: tuple[float, int, int] | None = None
    for index, bit in _candidates(view, trial_k):
        flip_bit(view, index, bit)
        loss = batch_loss(model, images, labels)
        flip_bit(view, index, bit)
        if best is None or loss > best[0]:
            best = (loss, index, bit)
    return best


def pbs_attack(
    model: Model,
    attack_images: np.ndarray,
    attack_labels: np.ndarray,
    cfg: PbsConfig | None = None,
    eval_images: np.ndarray | None = None,
    eval_labels: np.ndarray | None = None,
) -> AttackReport:
    """
    Flip one bit per iteration in the model's quantized layers (in place).

    Held-out accuracy uses (eval_images, eval_labels) when given, otherwise
    the attack batch.

    Raises:
        AttackError: no quantized layers to attack
    """
    cfg = cfg or PbsConfig()
    names = [n for n in model.quantized if cfg.layers is None or n in cfg.layers]
    if not names:
        raise AttackError("PBS needs at least one quantized layer; call quantize_model first")
    if eval_images is None or eval_labels is None:
        eval_images, eval_labels = attack_images, attack_labels

    views = [model.quantized[n] for n in names]
    before_codes = {v.layer_name: v.qweights.copy() for v in views}
    acc_before = accuracy_or_none(model, eval_images, eval_labels)
    trajectory = [batch_loss(model, attack_images, attack_labels)]
    acc = acc_before
    stop_reason = "max_iters"
    flips = 0

    with (
        LogContext(attack="pbs"),
        trace_operation("attack.pbs", {"layers": len(names)}),
        metrics_collector.stage("attack.pbs"),
    ):
        for iteration in range(cfg.max_iters):
            if acc is not None and acc < cfg.target_acc:
                stop_reason = "target_reached"
                break
            current = _gradients(model, attack_images, attack_labels)
            best: tuple[float, int, int, QuantizedLayerView] | None = None
            for view in views:
                found = _in_layer_search(model, view, attack_images, attack_labels, cfg.trial_k)
                if found is not None and (best is None or found[0] > best[0]):
                    best = (found[0], found[1], found[2], view)
            model.zero_grad()
            if best is None or best[0] <= current:
                stop_reason = "no_improving_flip"
                break
            loss, index, bit, view = best
            flip_bit(view, index, bit)
            flips += 1
            trajectory.append(loss)
            acc = accuracy_or_none(model, eval_images, eval_labels)
            logger.info(
                "Committed flip",
                iteration=iteration + 1,
                layer=view.layer_name,
                index=index,
                bit=bit,
                loss=round(loss, 5),
                acc=acc,
            )
        else:
            if acc is not None and acc < cfg.target_acc:
                stop_reason = "target_reached"

    modified = sum(
        int(np.count_nonzero(before_codes[v.layer_name] != v.qweights)) for v in views
    )
    return AttackReport(
        attack_kind="pbs",
        layers_touched=[touch(model, n) for n in names],
        params_modified=modified,
        bits_flipped=flips,
        acc_before=acc_before,
        acc_after=acc,
        iterations=flips,
        success=stop_reason == "target_reached",
        stop_reason=stop_reason,
        trajectory=trajectory,
        seed=cfg.seed,
    )
