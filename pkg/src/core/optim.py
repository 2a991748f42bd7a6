"""
Parameters and optimizers.

Parameter is a named leaf tensor that owns its optimizer state. The
`optimizer_step` function applies one SGD or Adam update in place; SGD and Adam
classes wrap it with fixed hyperparameters for training loops.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from typing import Any, Literal

import numpy as np

from src.core.errors import OptimizerError
from src.core.tensor import Tensor

OptimizerKind = Literal["sgd", "adam"]


class Parameter(Tensor):
    """
    Trainable tensor with a dotted name (e.g. "encoder.conv1.weight").

    `state` holds per-element optimizer buffers ("m", "v") and the Adam step
    counter ("t"); buffers always match the tensor's shape.
    """

    __slots__ = ("name", "state")

    def __init__(self, data: Any, name: str) -> None:
        super().__init__(data, requires_grad=True)
        self.name = name
        self.state: dict[str, Any] = {}

    def assign(self, values: np.ndarray) -> None:
        """Overwrite the values in place, keeping dtype and shape."""
        self.data[...] = np.asarray(values, dtype=self.data.dtype).reshape(self.data.shape)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def optimizer_step(
    params: Sequence[Parameter],
    lr: float,
    kind: OptimizerKind = "sgd",
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """
    Update every parameter in place from its gradient.

    Gradients are left untouched; callers clear them explicitly.

    Raises:
        OptimizerError: any parameter lacks a gradient, or kind is unknown
    """
    missing = [p.name for p in params if p.grad is None]
    if missing:
        raise OptimizerError(f"missing gradient for parameter(s): {', '.join(missing)}")

    if kind == "sgd":
        for p in params:
            assert p.grad is not None
            p.data -= (lr * p.grad).astype(p.data.dtype)
        return

    if kind != "adam":
        raise OptimizerError(f"unknown optimizer kind: {kind!r}")

    for p in params:
        assert p.grad is not None
        grad = p.grad.astype(np.float64)
        m = p.state.get("m")
        v = p.state.get("v")
        if m is None or v is None or m.shape != p.data.shape:
            m = np.zeros(p.data.shape, dtype=np.float64)
            v = np.zeros(p.data.shape, dtype=np.float64)
        t = int(p.state.get("t", 0)) + 1
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
        p.state.update(m=m, v=v, t=t)


class SGD:
    """Plain gradient descent over a fixed parameter list."""

    kind: OptimizerKind = "sgd"

    def __init__(self, params: Iterable[Parameter], lr: float = 0.01) -> None:
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        optimizer_step(self.params, self.lr, kind=self.kind)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam(SGD):
    """Adam with bias correction; moment buffers live on each Parameter."""

    kind: OptimizerKind = "adam"

    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        super().__init__(params, lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        for p in self.params:
            p.state.clear()

    def step(self) -> None:
        optimizer_step(
            self.params, self.lr, kind="adam", beta1=self.beta1, beta2=self.beta2, eps=self.eps
        )


def build_optimizer(
    params: Iterable[Parameter], kind: OptimizerKind, lr: float, **kwargs: float
) -> SGD:
    """Construct an optimizer by kind name."""
    if kind == "adam":
        return Adam(params, lr=lr, **kwargs)
    if kind == "sgd":
        return SGD(params, lr=lr)
    raise OptimizerError(f"unknown optimizer kind: {kind!r}")
