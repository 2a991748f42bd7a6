"""
ContrastGuard - Model

Network definition and weight representations:
- Model: encoder, projection head and FC classifier
- Quantization: per-layer int8 views and bit flips
- Checkpoint: bit-exact binary container
"""

from src.models.checkpoint import (
    CheckpointContents,
    CheckpointMetadata,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from src.models.network import (
    Model,
    ModelConfig,
    build_model,
    classify,
    encode,
    evaluate_accuracy,
    predict,
    project,
)
from src.models.quantization import (
    QuantizedLayerView,
    flip_bit,
    quantize_layer,
    quantize_model,
)

__all__ = [
    "CheckpointContents",
    "CheckpointMetadata",
    "Model",
    "ModelConfig",
    "QuantizedLayerView",
    "build_model",
    "classify",
    "encode",
    "evaluate_accuracy",
    "flip_bit",
    "load_checkpoint",
    "predict",
    "project",
    "quantize_layer",
    "quantize_model",
    "read_checkpoint",
    "save_checkpoint",
]
