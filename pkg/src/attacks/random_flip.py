"""
Random bit flips: the baseline fault model for detector calibration.
"""

from __future__ import annotations

import numpy as np

from src.attacks.report import AttackReport, accuracy_or_none, touch
from src.core.errors import AttackError
from src.core.seeding import substream
from src.models.network import Model
from src.models.quantization import BITS, flip_bit
from src.observability.logger import get_logger

logger = get_logger(__name__, component="attacks")


def random_bit_flip(
    model: Model,
    layer: str,
    n_bits: int,
    seed: int,
    msb_only: bool = False,
    eval_images: np.ndarray | None = None,
    eval_labels: np.ndarray | None = None,
) -> AttackReport:
    """
    Flip n_bits distinct (weight, bit) positions of a quantized layer, chosen
    uniformly from the seed alone. Running it twice with the same arguments
    restores the layer bit-exactly.

    Args:
        msb_only: Restrict the choice to the sign bit of each weight

    Raises:
        AttackError: layer not quantized, or n_bits exceeds the available bits
    """
    view = model.quantized.get(layer)
    if view is None:
        raise AttackError(f"layer {layer!r} is not quantized")
    available = view.size if msb_only else view.size * BITS
    if not 0 <= n_bits <= available:
        raise AttackError(f"cannot flip {n_bits} bits; layer {layer} has {available} eligible bits")

    acc_before = accuracy_or_none(model, eval_images, eval_labels)
    positions = np.sort(substream(seed, "random-flip").choice(available, size=n_bits, replace=False))
    for position in positions:
        if msb_only:
            flip_bit(view, int(position), BITS - 1)
        else:
            flip_bit(view, int(position) // BITS, int(position) % BITS)

    indices = positions if msb_only else positions // BITS
    logger.info("Random bits flipped", layer=layer, n_bits=n_bits, msb_only=msb_only)
    return AttackReport(
        attack_kind="random_flip",
        layers_touched=[touch(model, layer)],
        params_modified=int(np.unique(indices).size),
        bits_flipped=n_bits,
        acc_before=acc_before,
        acc_after=accuracy_or_none(model, eval_images, eval_labels),
        iterations=1,
        success=True,
        stop_reason="flipped",
        seed=seed,
    )
