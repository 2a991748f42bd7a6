"""
ContrastGuard - Core

Numeric substrate shared by every module:
- Tensor: numpy-backed arrays with a reverse-mode tape
- ops: differentiable operation families
- optim: named parameters and SGD/Adam updates
- seeding: named seed substreams
"""

from src.core.errors import ContrastGuardError
from src.core.optim import Adam, Parameter, SGD, optimizer_step
from src.core.tensor import Tensor, backward, no_grad, zero_grad

__all__ = [
    "ContrastGuardError",
    "Tensor",
    "backward",
    "no_grad",
    "zero_grad",
    "Parameter",
    "SGD",
    "Adam",
    "optimizer_step",
]
