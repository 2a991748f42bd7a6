"""
Per-layer symmetric int8 quantization and bit flips.

A QuantizedLayerView tracks a layer's weight tensor as two's-complement int8
codes with one scale. The model keeps running on float weights; the view's
shadow (scale * q) is what is installed in the model.
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from src.core.errors import ModelConfigError, QuantizationError
from src.core.optim import Parameter
from src.models.network import Model
from src.observability.logger import get_logger

logger = get_logger(__name__, component="quantization")

QMAX = 127
BITS = 8


@dataclass
class QuantizedLayerView:
    """int8 view of one weight tensor. Flat arrays are in row-major order."""

    layer_name: str
    scale: float
    qweights: np.ndarray
    shadow: np.ndarray
    weight: Parameter = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return int(self.qweights.size)


def compute_scale(weights: np.ndarray) -> float:
    """max|w| / 127 as float32; an all-zero tensor gets scale 1."""
    peak = float(np.max(np.abs(weights))) if weights.size else 0.0
    if peak == 0.0:
        return 1.0
    return float(np.float32(peak) / np.float32(QMAX))


def quantize(weights: np.ndarray, scale: float) -> np.ndarray:
    q = np.rint(np.asarray(weights, dtype=np.float64) / scale)
    return np.clip(q, -QMAX - 1, QMAX).astype(np.int8).reshape(-1)


def dequantize(qweights: np.ndarray, scale: float) -> np.ndarray:
    return qweights.astype(np.float32) * np.float32(scale)


def quantize_layer(model: Model, layer_name: str) -> QuantizedLayerView:
    """
    Quantize a weight-bearing layer and install its dequantized weights.

    Quantizing an already-quantized layer returns the existing view.

    Raises:
        QuantizationError: unknown or weightless layer
    """
    if layer_name in model.quantized:
        return model.quantized[layer_name]
    try:
        layer = model.layer(layer_name)
    except ModelConfigError as e:
        raise QuantizationError(str(e)) from e

    scale = compute_scale(layer.weight.data)
    qweights = quantize(layer.weight.data, scale)
    shadow = dequantize(qweights, scale)
    layer.weight.assign(shadow)
    view = QuantizedLayerView(layer_name, scale, qweights, shadow, layer.weight)
    model.quantized[layer_name] = view
    logger.debug("Layer quantized", layer=layer_name, scale=scale, size=view.size)
    return view


def quantize_model(model: Model, layers: Iterable[str] | None = None) -> dict[str, QuantizedLayerView]:
    """Quantize the given layers (default: every weight-bearing layer)."""
    names = list(model.weight_layers()) if layers is None else list(layers)
    return {name: quantize_layer(model, name) for name in names}


def _check_flip(view: QuantizedLayerView, index: int, bit: int) -> None:
    if not 0 <= index < view.size:
        raise QuantizationError(
            f"index {index} out of range for layer {view.layer_name} with {view.size} weights"
        )
    if not 0 <= bit < BITS:
        raise QuantizationError(f"bit {bit} out of range 0..{BITS - 1}")


def flip_bit(view: QuantizedLayerView, index: int, bit: int) -> None:
    """
    XOR one bit of one int8 code and reinstall scale * q in the model.

    Raises:
        QuantizationError: index or bit out of range
    """
    _check_flip(view, index, bit)
    codes = view.qweights.view(np.uint8)
    codes[index] ^= np.uint8(1 << bit)
    value = view.qweights[index:index + 1].astype(np.float32) * np.float32(view.scale)
    view.shadow[index] = value[0]
    view.weight.data.reshape(-1)[index] = value[0]


def bit_delta(view: QuantizedLayerView, bit: int) -> np.ndarray:
    """
    Change in each dequantized weight if `bit` were flipped.

    Bits 0..6 contribute +-scale*2^bit depending on their current state; the
    sign bit contributes -+scale*128.
    """
    codes = view.qweights.view(np.uint8)
    is_set = ((codes >> np.uint8(bit)) & np.uint8(1)).astype(np.float32)
    magnitude = np.float32(view.scale) * np.float32(1 << bit)
    if bit == BITS - 1:
        return np.where(is_set == 1, magnitude, -magnitude).astype(np.float32)
    return np.where(is_set == 1, -magnitude, magnitude).astype(np.float32)
