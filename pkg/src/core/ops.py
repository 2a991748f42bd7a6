"""
Differentiable operations on Tensors.

Each op computes its forward result with numpy and records a closure that
maps the output gradient to per-input gradients. Families: elementwise
arithmetic, matmul, reductions, reshaping, activations, softmax/log/exp,
l2-normalize, concat, conv2d, max-pool, global-average-pool and a fused
cross-entropy.
"""

from __future__ import annotations

from collections.abc import Sequence
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.core.errors import ShapeError
from src.core.tensor import Tensor, as_tensor, record
from src.observability.logger import get_logger

logger = get_logger(__name__, component="ops")

Axis = int | tuple[int, ...] | None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return tuple(np.broadcast_shapes(a.shape, b.shape))
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# --- elementwise arithmetic -------------------------------------------------


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record(a.data + b.data, (a, b), backward, "add")


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record(a.data - b.data, (a, b), backward, "sub")


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(a.data * b.data, (a, b), backward, "mul")


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return record(a.data / b.data, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return g @ b.data.T, a.data.T @ g

    return record(a.data @ b.data, (a, b), backward, "matmul")


# --- reductions and reshaping -----------------------------------------------


def sum(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward, "sum")


def mean(a: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / count,)

    return record(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), backward, "mean")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        data = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from None
    return record(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def flatten(a: Tensor) -> Tensor:
    """Collapse every axis but the first."""
    return reshape(a, (a.shape[0], -1))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return record(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def getitem(a: Tensor, index: Any) -> Tensor:
    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return record(np.array(a.data[index]), (a,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    reference = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(reference) or any(
            x != y for i, (x, y) in enumerate(zip(reference, other)) if i != axis % len(reference)
        ):
            raise ShapeError(f"concat shape mismatch: {tuple(reference)} vs {tuple(other)}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> list[np.ndarray]:
        return list(np.split(g, splits, axis=axis))

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return record(data, tuple(tensors), backward, "concat")


# --- activations and exponentials -------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record(np.where(mask, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * mask,), "relu")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return record(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record(out, (a,), backward, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return record(out, (a,), backward, "log_softmax")


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """
    Scale each slice along `axis` to unit Euclidean norm.

    Zero slices map to zero (and a warning is logged) so cosine similarity
    against a zero vector is 0 instead of NaN.
    """
    norms = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    zero = norms <= eps
    if np.any(zero):
        logger.warning("l2_normalize received zero vector(s)", count=int(zero.sum()))
    safe = np.where(zero, 1, norms)
    out = np.where(zero, 0, a.data / safe).astype(a.data.dtype)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        dot = (g * out).sum(axis=axis, keepdims=True)
        grad = (g - out * dot) / safe
        return (np.where(zero, 0, grad),)

    return record(out, (a,), backward, "l2_normalize")


# --- layers -----------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias, weight shaped (out_features, in_features)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    out = matmul(x, transpose(weight))
    return add(out, bias) if bias is not None else out


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """
    2-D cross-correlation over NCHW input with an (O, C, kh, kw) kernel.

    Implemented as im2col followed by one matrix product.
    """
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}")
    batch, channels, height, width = x.shape
    out_ch, _, kh, kw = weight.shape
    if height + 2 * padding < kh or width + 2 * padding < kw:
        raise ShapeError(f"conv2d kernel {weight.shape} larger than padded input {x.shape}")

    padded = _pad(x.data, padding)
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, channels * kh * kw)
    w_mat = weight.data.reshape(out_ch, -1)
    out = (cols @ w_mat.T).reshape(batch, out_h, out_w, out_ch).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g: np.ndarray) -> list[np.ndarray | None]:
        g_mat = g.transpose(0, 2, 3, 1).reshape(-1, out_ch)
        grad_w = (g_mat.T @ cols).reshape(weight.shape)
        grad_cols = (g_mat @ w_mat).reshape(batch, out_h, out_w, channels, kh, kw)
        grad_padded = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                grad_padded[
                    :, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride
                ] += grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grad_x = grad_padded[:, :, padding : padding + height, padding : padding + width]
        grads: list[np.ndarray | None] = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out, parents, backward, "conv2d")


def max_pool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """
    Non-overlapping max pooling; trailing rows/columns that do not fill a
    window are dropped. Ties resolve to the first index in row-major order.
    """
    if x.ndim != 4:
        raise ShapeError(f"max_pool2d expects NCHW input, got shape {x.shape}")
    batch, channels, height, width = x.shape
    out_h, out_w = height // kernel, width // kernel
    if out_h == 0 or out_w == 0:
        raise ShapeError(f"max_pool2d kernel {kernel} larger than input {x.shape}")
    cropped = x.data[:, :, : out_h * kernel, : out_w * kernel]
    blocks = (
        cropped.reshape(batch, channels, out_h, kernel, out_w, kernel)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, out_h, out_w, kernel * kernel)
    )
    winner = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad_blocks = np.zeros_like(blocks)
        np.put_along_axis(grad_blocks, winner[..., None], g[..., None], axis=-1)
        grad_cropped = (
            grad_blocks.reshape(batch, channels, out_h, out_w, kernel, kernel)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, channels, out_h * kernel, out_w * kernel)
        )
        grad = np.zeros_like(x.data)
        grad[:, :, : out_h * kernel, : out_w * kernel] = grad_cropped
        return (grad,)

    return record(np.ascontiguousarray(out), (x,), backward, "max_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Average over spatial axes: (B, C, H, W) -> (B, C)."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW input, got shape {x.shape}")
    return mean(x, axis=(2, 3))


def cross_entropy(
    logits: Tensor,
    labels: np.ndarray,
    weights: np.ndarray | None = None,
    reduction: str = "mean",
) -> Tensor:
    """
    Softmax cross-entropy against integer labels.

    Args:
        logits: (B, C) scores
        labels: (B,) integer class indices
        weights: optional (B,) per-row weights
        reduction: "mean" (weighted rows / B) or "sum"
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy shape mismatch: logits {logits.shape}, labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ShapeError(f"labels out of range for {logits.shape[1]} classes")
    rows = np.arange(labels.shape[0])
    row_weights = np.ones(labels.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    scale = 1.0 / labels.shape[0] if reduction == "mean" else 1.0

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    per_row = -log_probs[rows, labels]
    value = np.asarray(np.sum(row_weights * per_row) * scale, dtype=logits.data.dtype)

    def backward(g: np.ndarray) -> tuple[np.ndarray]:
        grad = np.exp(log_probs)
        grad[rows, labels] -= 1
        grad *= (row_weights * scale)[:, None]
        return ((grad * g).astype(logits.data.dtype),)

    return record(value, (logits,), backward, "cross_entropy")
