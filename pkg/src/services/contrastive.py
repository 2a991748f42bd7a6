"""
Contrastive Loss - Cosine Similarity and the Pairwise Objective

Two formulations over the projections of a ContrastiveBatch:
- "negatives_only": for each pair n the numerator is exp(sim(z_b[n], z_a[n]) / t) and
  the denominator sums exp(sim(z_b[n], z_a[k]) / t) + exp(sim(z_a[n], z_b[k]) / t)
  over k != n. The positive pair is excluded, so the loss can be negative.
- "standard": 2N-view NT-Xent whose denominator includes the positive.
"""

from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

from src.core import ops
from src.core.errors import LossError
from src.core.tensor import Tensor, as_tensor


class LossConfig(BaseModel):
    """Temperature, reduction and formulation of the contrastive loss."""

    temperature: float = Field(default=0.5, gt=0.0)
    reduction: Literal["sum", "mean"] = "sum"
    variant: Literal["negatives_only", "standard"] = "negatives_only"


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two vectors; 0 when either is the zero vector."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise LossError(f"cosine_sim length mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _check_pair(z_a: Tensor, z_b: Tensor) -> int:
    if z_a.ndim != 2 or z_a.shape != z_b.shape:
        raise LossError(f"projection shapes must match (N, d): {z_a.shape} vs {z_b.shape}")
    n = z_a.shape[0]
    if n < 2:
        raise LossError(f"contrastive loss needs at least 2 pairs, got N={n}")
    return n


def _negatives_only_terms(za: Tensor, zb: Tensor, temperature: float) -> Tensor:
    n = za.shape[0]
    eye = np.eye(n, dtype=za.data.dtype)
    off = 1 - eye
    # s[n, k] = sim(z_b[n], z_a[k]) / t, so s[k, n] = sim(z_a[n], z_b[k]) / t
    s = ops.mul(ops.matmul(zb, ops.transpose(za)), 1.0 / temperature)
    masked = np.where(off > 0, s.data, -np.inf)
    shift = np.maximum(masked.max(axis=1), masked.max(axis=0))
    rows = ops.sum(ops.mul(ops.exp(ops.sub(s, shift[:, None])), off), axis=1)
    cols = ops.sum(ops.mul(ops.exp(ops.sub(s, shift[None, :])), off), axis=0)
    log_den = ops.add(ops.log(ops.add(rows, cols)), shift)
    positive = ops.sum(ops.mul(s, eye), axis=1)
    return ops.sub(log_den, positive)


def _standard_terms(za: Tensor, zb: Tensor, temperature: float) -> Tensor:
    n = za.shape[0]
    z = ops.concat([za, zb], axis=0)
    s = ops.mul(ops.matmul(z, ops.transpose(z)), 1.0 / temperature)
    off = 1 - np.eye(2 * n, dtype=za.data.dtype)
    positive_mask = np.zeros((2 * n, 2 * n), dtype=za.data.dtype)
    idx = np.arange(2 * n)
    positive_mask[idx, (idx + n) % (2 * n)] = 1
    shift = np.where(off > 0, s.data, -np.inf).max(axis=1)
    den = ops.sum(ops.mul(ops.exp(ops.sub(s, shift[:, None])), off), axis=1)
    log_den = ops.add(ops.log(den), shift)
    positive = ops.sum(ops.mul(s, positive_mask), axis=1)
    return ops.sub(log_den, positive)


def contrastive_loss(z_a: Tensor, z_b: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """
    Contrastive loss between projections of view a (z_a) and view b (z_b).

    Rows are l2-normalized internally, so scaling a row leaves the loss
    unchanged. Differentiable end to end.

    Raises:
        LossError: N < 2 or mismatched shapes
    """
    cfg = cfg or LossConfig()
    z_a, z_b = as_tensor(z_a), as_tensor(z_b)
    _check_pair(z_a, z_b)
    za = ops.l2_normalize(z_a, axis=1)
    zb = ops.l2_normalize(z_b, axis=1)
    if cfg.variant == "negatives_only":
        terms = _negatives_only_terms(za, zb, cfg.temperature)
    else:
        terms = _standard_terms(za, zb, cfg.temperature)
    total = ops.sum(terms)
    if cfg.reduction == "mean":
        return ops.mul(total, 1.0 / terms.shape[0])
    return total
