"""
Constrained parameter modification of one layer (fault sneaking).

The modification d of the layer weight is split as d = z with scaled dual u:
- d-step: one linearized proximal step on the classification constraint
  loss, d = (d / lr - grad + rho (z - u)) / (1 / lr + rho)
- z-step: proximal operator of the norm penalty on d + u. l2: block
  soft-threshold by lam / rho, then projection onto the ball of radius
  `budget` when set. l0: keep the `keep` largest magnitudes.
- u-step: u += d - z

The installed modification is always z. Constraints: the first S images
must be classified as their targets, the remaining R - S must keep their
original predictions.
"""

from __future__ import annotations

import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

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
from src.models.network import Model, classify, encode, predict
from src.observability.logger import LogContext, get_logger
from src.observability.metrics import metrics_collector
from src.observability.tracer import trace_operation

logger = get_logger(__name__, component="attacks")


class FsaConfig(BaseModel):
    """Fault-sneaking attack settings; S images are steered, R - S are kept."""

    s: int = Field(default=5, ge=1)
    r: int = Field(default=20, ge=1)
    target_labels: list[int] | None = None
    norm: Literal["l0", "l2"] = "l2"
    rho: float = Field(default=1.0, gt=0.0)
    lam: float = Field(default=1e-3, ge=0.0)
    lr: float = Field(default=0.05, gt=0.0)
    margin: float = Field(default=0.5, ge=0.0)
    max_iters: int = Field(default=300, ge=1)
    layer: str = "classifier"
    keep_fraction: float = Field(default=0.1, gt=0.0, le=1.0)
    keep: int | None = Field(default=None, ge=1)
    budget: float | None = Field(default=None, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _check_counts(self) -> FsaConfig:
        if self.s > self.r:
            raise ValueError(f"S={self.s} must not exceed R={self.r}")
        if self.target_labels is not None and len(self.target_labels) != self.s:
            raise ValueError(f"expected {self.s} target labels, got {len(self.target_labels)}")
        return self


def choose_fsa_targets(
    preds: np.ndarray, labels: np.ndarray, num_classes: int, rng: np.random.Generator
) -> list[int]:
    """A random target per image, different from both its label and its prediction."""
    if num_classes < 3:
        raise AttackError(f"need at least 3 classes to pick targets, got {num_classes}")
    targets = []
    for pred, label in zip(preds, labels, strict=True):
        choices = [c for c in range(num_classes) if c != int(pred) and c != int(label)]
        targets.append(int(rng.choice(choices)))
    return targets


def prox_l2(v: np.ndarray, threshold: float, radius: float | None) -> np.ndarray:
    """Block soft-threshold, optionally followed by projection onto an l2 ball."""
    norm = float(np.linalg.norm(v))
    if norm <= threshold or norm == 0.0:
        return np.zeros_like(v)
    out = v * (1.0 - threshold / norm)
    if radius is not None:
        out_norm = norm - threshold
        if out_norm > radius:
            out = out * (radius / out_norm) if out_norm > 0 else np.zeros_like(v)
    return out


def prox_l0(v: np.ndarray, keep: int) -> np.ndarray:
    """Keep the `keep` largest-magnitude entries (first index wins ties)."""
    flat = v.reshape(-1)
    if keep >= flat.size:
        return v.copy()
    order = np.argsort(-np.abs(flat), kind="stable")[:keep]
    out = np.zeros_like(flat)
    out[order] = flat[order]
    return out.reshape(v.shape)


def _margins(logits: np.ndarray, desired: np.ndarray) -> np.ndarray:
    rows = np.arange(len(desired))
    target = logits[rows, desired]
    others = logits.copy()
    others[rows, desired] = -np.inf
    return target - others.max(axis=1)


def fsa_attack(
    model: Model,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: FsaConfig | None = None,
    eval_images: np.ndarray | None = None,
    eval_labels: np.ndarray | None = None,
) -> AttackReport:
    """
    Modify cfg.layer's weight (in place) so the first S of R images take
    their target labels and the rest keep their predictions.

    Infeasibility after max_iters is reported through success and the
    per-constraint flags.

    Raises:
        AttackError: fewer than R images, or a target equal to its true label
    """
    cfg = cfg or FsaConfig()
    if len(images) < cfg.r:
        raise AttackError(f"FSA needs R={cfg.r} images, got {len(images)}")
    images = np.asarray(images[: cfg.r], dtype=np.float32)
    labels = np.asarray(labels[: cfg.r], dtype=np.int64)
    layer = model.layer(cfg.layer)
    model.release_quantization([cfg.layer])

    original_preds = predict(model, images)
    if cfg.target_labels is None:
        rng = np.random.default_rng(cfg.seed)
        targets = choose_fsa_targets(original_preds[: cfg.s], labels[: cfg.s], model.num_classes, rng)
    else:
        targets = list(cfg.target_labels)
    if any(t == int(y) for t, y in zip(targets, labels[: cfg.s], strict=True)):
        raise AttackError("FSA targets must differ from the true labels")
    if any(not 0 <= t < model.num_classes for t in targets):
        raise AttackError(f"FSA targets must lie in 0..{model.num_classes - 1}")
    desired = np.concatenate([np.asarray(targets, dtype=np.int64), original_preds[cfg.s :]])

    acc_before = accuracy_or_none(model, eval_images, eval_labels)
    w0 = layer.weight.data.copy()
    d = np.zeros_like(w0, dtype=np.float64)
    z = np.zeros_like(d)
    u = np.zeros_like(d)
    keep = cfg.keep or max(1, math.ceil(cfg.keep_fraction * w0.size))
    features = frozen_embeddings(model, images) if cfg.layer == "classifier" else None

    def logits_for() -> Tensor:
        if features is not None:
            return classify(model, features)
        return classify(model, encode(model, images))

    def install(delta: np.ndarray) -> None:
        layer.weight.assign(w0 + delta)

    def satisfied() -> np.ndarray:
        install(z)
        with no_grad():
            return logits_for().data.argmax(axis=1) == desired

    kind = "fsa_l0" if cfg.norm == "l0" else "fsa_l2"
    iterations = 0
    stop_reason = "max_iters"
    with (
        LogContext(attack=kind),
        trace_operation(f"attack.{kind}", {"layer": cfg.layer}),
        metrics_collector.stage(f"attack.{kind}"),
    ):
        for iteration in range(cfg.max_iters):
            if satisfied().all():
                stop_reason = "constraints_met"
                break
            iterations = iteration + 1
            install(d)
            model.zero_grad()
            logits = logits_for()
            active = (_margins(logits.data, desired) <= cfg.margin).astype(np.float64)
            loss = ops.cross_entropy(logits, desired, weights=active, reduction="sum")
            if active.any():
                loss.backward()
                grad = layer.weight.grad.astype(np.float64)
            else:
                grad = np.zeros_like(d)
            model.zero_grad()

            d = (d / cfg.lr - grad + cfg.rho * (z - u)) / (1.0 / cfg.lr + cfg.rho)
            v = d + u
            if cfg.norm == "l2":
                z = prox_l2(v, cfg.lam / cfg.rho, cfg.budget)
            else:
                z = prox_l0(v, keep)
            u = u + d - z
        else:
            if satisfied().all():
                stop_reason = "constraints_met"

    install(z)
    with no_grad():
        final = logits_for().data.argmax(axis=1)
    targets_hit = [bool(x) for x in final[: cfg.s] == desired[: cfg.s]]
    keepers_kept = [bool(x) for x in final[cfg.s :] == desired[cfg.s :]]
    success = all(targets_hit) and all(keepers_kept)
    logger.info(
        "FSA finished",
        success=success,
        iterations=iterations,
        targets_hit=sum(targets_hit),
        keepers_kept=sum(keepers_kept),
    )
    return AttackReport(
        attack_kind=kind,
        layers_touched=[touch(model, cfg.layer)],
        params_modified=count_changed(w0, layer.weight.data),
        acc_before=acc_before,
        acc_after=accuracy_or_none(model, eval_images, eval_labels),
        iterations=iterations,
        success=success,
        stop_reason=stop_reason if success else "infeasible",
        constraints={"targets_hit": targets_hit, "keepers_kept": keepers_kept},
        seed=cfg.seed,
    )
