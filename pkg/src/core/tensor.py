"""
Tensor - Dense Arrays with a Reverse-Mode Tape

The substrate for every other module:
- Tensor: numpy-backed array with an optional gradient accumulator
- Tape recording: every op output remembers its parents and a backward closure
- backward(): reverse topological sweep populating .grad on reachable tensors
- no_grad() / default_dtype(): context-scoped switches
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Iterator, Sequence
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any

import numpy as np

from src.core.errors import BackwardError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]

_grad_enabled: ContextVar[bool] = ContextVar("grad_enabled", default=True)
_default_dtype: ContextVar[type[np.floating[Any]]] = ContextVar(
    "default_dtype", default=np.float32
)


def is_grad_enabled() -> bool:
    """Whether new op outputs are recorded on the tape."""
    return _grad_enabled.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """
    Disable tape recording inside the block.

    Example:
        with no_grad():
            logits = classify(model, encode(model, images))
    """
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def get_default_dtype() -> type[np.floating[Any]]:
    return _default_dtype.get()


@contextmanager
def default_dtype(dtype: type[np.floating[Any]]) -> Iterator[None]:
    """Construct new tensors with `dtype` inside the block (gradient checks use float64)."""
    token = _default_dtype.set(dtype)
    try:
        yield
    finally:
        _default_dtype.reset(token)


class Tensor:
    """
    n-dimensional array with an optional gradient.

    Invariants:
        - every dimension is positive, so product(shape) == data.size
        - grad, when present, has the same shape as data
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op", "_consumed")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        dtype: type[np.floating[Any]] | None = None,
    ) -> None:
        array = np.array(data, dtype=dtype or get_default_dtype(), copy=True)
        if any(dim <= 0 for dim in array.shape):
            raise ShapeError(f"tensor dimensions must be positive, got shape {array.shape}")
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: BackwardFn | None = None
        self._op = "leaf"
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def is_leaf(self) -> bool:
        return self._backward_fn is None

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying array."""
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype.type)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # Operator sugar; the implementations live in src.core.ops.
    def __add__(self, other: Any) -> Tensor:
        from src.core import ops

        return ops.add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        from src.core import ops

        return ops.add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        from src.core import ops

        return ops.sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        from src.core import ops

        return ops.sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        from src.core import ops

        return ops.mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        from src.core import ops

        return ops.mul(other, self)

    def __truediv__(self, other: Any) -> Tensor:
        from src.core import ops

        return ops.div(self, other)

    def __neg__(self) -> Tensor:
        from src.core import ops

        return ops.neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        from src.core import ops

        return ops.matmul(self, other)

    def __getitem__(self, index: Any) -> Tensor:
        from src.core import ops

        return ops.getitem(self, index)

    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        from src.core import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        from src.core import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> Tensor:
        from src.core import ops

        return ops.reshape(self, shape)

    @property
    def T(self) -> Tensor:  # noqa: N802
        from src.core import ops

        return ops.transpose(self)


def as_tensor(value: Any) -> Tensor:
    """Wrap constants; tensors pass through untouched."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def record(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward_fn: BackwardFn,
    op: str,
) -> Tensor:
    """
    Create an op output and put it on the tape when any parent needs gradients.

    `backward_fn` maps the output gradient to one gradient per parent (None for
    parents that take no gradient).
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._consumed = False
    needs_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs_grad
    if needs_grad:
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
        out._op = op
    else:
        out._parents = ()
        out._backward_fn = None
        out._op = op
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """
    Populate gradients for every tensor reachable from `loss` that requires them.

    Raises:
        BackwardError: loss is not scalar, is detached, was already
            back-propagated, or a reachable leaf still holds a gradient
            from a previous pass (call zero_grad first).
    """
    if loss.data.size != 1:
        raise BackwardError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise BackwardError("backward called on a detached tensor (no tape recorded)")
    if loss._consumed:
        raise BackwardError("tape already consumed; recompute the loss before calling backward")

    order = _topological_order(loss)
    stale = [t for t in order if t.is_leaf and t.grad is not None]
    if stale:
        raise BackwardError(
            f"{len(stale)} leaf tensor(s) already hold gradients; call zero_grad() first"
        )

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        grad = pending.pop(id(node), None)
        if grad is None:
            grad = np.zeros_like(node.data)
        node.grad = grad
        if node._backward_fn is None:
            continue
        parent_grads = node._backward_fn(grad)
        for parent, parent_grad in zip(node._parents, parent_grads, strict=True):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = parent_grad.astype(parent.data.dtype, copy=False)
            if id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + parent_grad
            else:
                pending[id(parent)] = parent_grad
    loss._consumed = True


def zero_grad(tensors: Iterable[Tensor]) -> None:
    """Clear gradients so the next backward pass may populate them."""
    for tensor in tensors:
        tensor.grad = None
