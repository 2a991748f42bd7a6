"""
Seed substreams.

All randomness flows from one root seed. Each stage draws from a named
substream so changing one stage's consumption leaves the others untouched.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def substream_seed(root_seed: int, name: str, *indices: int) -> np.random.SeedSequence:
    """SeedSequence keyed by (root seed, stage name, optional indices)."""
    return np.random.SeedSequence([root_seed & 0xFFFFFFFFFFFFFFFF, _name_key(name), *indices])


def substream(root_seed: int, name: str, *indices: int) -> np.random.Generator:
    """
    Generator for a named stage.

    Example:
        rng = substream(cfg.seed, "attack", instance_index)
    """
    return np.random.default_rng(substream_seed(root_seed, name, *indices))


def derive_seed(root_seed: int, name: str, *indices: int) -> int:
    """A 63-bit integer seed for a named stage (for configs that store plain ints)."""
    state = substream_seed(root_seed, name, *indices).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
