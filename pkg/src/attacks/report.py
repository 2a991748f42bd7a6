"""
Attack reports and shared attack helpers.
"""

from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

from src.core import ops
from src.core.tensor import Tensor, no_grad
from src.models.network import Model, classify, encode, evaluate_accuracy

AttackKind = Literal["pbs", "fsa_l0", "fsa_l2", "gda", "random_flip"]


class LayerTouch(BaseModel):
    layer_name: str
    total_param_count: int = Field(ge=0)


class AttackReport(BaseModel):
    """What an attack changed and how accuracy moved."""

    attack_kind: AttackKind
    layers_touched: list[LayerTouch] = Field(default_factory=list)
    params_modified: int = Field(default=0, ge=0)
    bits_flipped: int = Field(default=0, ge=0)
    acc_before: float | None = Field(default=None, ge=0.0, le=1.0)
    acc_after: float | None = Field(default=None, ge=0.0, le=1.0)
    iterations: int = Field(default=0, ge=0)
    success: bool = False
    stop_reason: str = ""
    constraints: dict[str, list[bool]] = Field(default_factory=dict)
    trajectory: list[float] = Field(default_factory=list)
    seed: int = 0

    @model_validator(mode="after")
    def _modified_within_layers(self) -> AttackReport:
        total = sum(t.total_param_count for t in self.layers_touched)
        if self.layers_touched and self.params_modified > total:
            raise ValueError(f"params_modified {self.params_modified} exceeds layer total {total}")
        return self

    @property
    def param_count(self) -> int:
        return sum(t.total_param_count for t in self.layers_touched)


def touch(model: Model, layer_name: str) -> LayerTouch:
    return LayerTouch(layer_name=layer_name, total_param_count=model.layer(layer_name).param_count)


def accuracy_or_none(
    model: Model, images: np.ndarray | None, labels: np.ndarray | None
) -> float | None:
    if images is None or labels is None or len(images) == 0:
        return None
    return evaluate_accuracy(model, images, labels)


def batch_loss(model: Model, images: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy without a tape."""
    with no_grad():
        return ops.cross_entropy(classify(model, encode(model, images)), labels).item()


def count_changed(before: np.ndarray, after: np.ndarray) -> int:
    return int(np.count_nonzero(before.reshape(-1) != after.reshape(-1)))


def frozen_embeddings(model: Model, images: np.ndarray) -> Tensor:
    """Encoder output as a constant, for attacks confined to the classifier."""
    with no_grad():
        return Tensor(encode(model, images).data)
