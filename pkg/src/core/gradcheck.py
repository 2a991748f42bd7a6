"""
Finite-difference gradient checking.

Compares taped gradients against central differences, both computed in
float64 so the comparison measures the derivative rules, not rounding.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from src.core.tensor import Tensor, backward, default_dtype, zero_grad


@dataclass
class GradcheckResult:
    """Outcome of one gradient check."""

    max_rel_error: float
    per_input: list[float]

    def passed(self, tolerance: float = 1e-3) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)."""
    diff = float(np.linalg.norm(analytic - numeric))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), 1e-8)
    return diff / scale


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    eps: float = 1e-3,
    seed: int = 0,
) -> GradcheckResult:
    """
    Check d fn / d inputs against central differences.

    Non-scalar outputs are reduced with fixed random weights so every output
    element contributes to the check.
    """
    with default_dtype(np.float64):
        arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
        leaves = [Tensor(x, requires_grad=True) for x in arrays]
        probe = fn(*leaves)
        weights = np.random.default_rng(seed).uniform(0.5, 1.5, size=probe.shape)

        def scalar(*ts: Tensor) -> Tensor:
            out = fn(*ts)
            return (out * Tensor(weights)).sum()

        zero_grad(leaves)
        backward(scalar(*leaves))
        analytic = [leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

        errors: list[float] = []
        for i, base in enumerate(arrays):
            numeric = np.zeros_like(base)
            for flat in range(base.size):
                idx = np.unravel_index(flat, base.shape)
                plus = [a.copy() for a in arrays]
                minus = [a.copy() for a in arrays]
                plus[i][idx] += eps
                minus[i][idx] -= eps
                f_plus = scalar(*[Tensor(a) for a in plus]).item()
                f_minus = scalar(*[Tensor(a) for a in minus]).item()
                numeric[idx] = (f_plus - f_minus) / (2 * eps)
            errors.append(relative_error(analytic[i], numeric))

    return GradcheckResult(max_rel_error=max(errors), per_input=errors)
