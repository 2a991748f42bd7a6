"""
Model - Encoder, Projection Head and Classifier

Contains:
- ModelConfig: preset and dimensions, validated with pydantic
- Model: base encoder, one-hidden-layer projection head, FC classifier and
  the per-layer quantized views used by bit-level attacks
- build_model / encode / project / classify / predict / evaluate_accuracy
"""

from __future__ import annotations

import copy
import hashlib
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Literal

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator

from src.core.errors import InvalidInputError, ModelConfigError, ShapeError
from src.core.optim import Parameter
from src.core.tensor import Tensor, no_grad
from src.models.layers import (
    Conv2d,
    GlobalAvgPool,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
    ResidualBlock,
    Sequential,
    WeightLayer,
)
from src.observability.logger import get_logger

if TYPE_CHECKING:
    from src.models.quantization import QuantizedLayerView

logger = get_logger(__name__, component="model")

ParameterGroup = Literal["encoder", "projection_head", "classifier"]
ALL_GROUPS: tuple[ParameterGroup, ...] = ("encoder", "projection_head", "classifier")


class ModelConfig(BaseModel):
    """Architecture of the encoder, projection head and classifier."""

    preset: Literal["tiny", "resnet-lite"] = "tiny"
    in_channels: int = Field(default=3, gt=0)
    image_size: int = Field(default=32, gt=0)
    channels: list[int] = Field(default_factory=lambda: [16, 32])
    embedding_dim: int = Field(default=64, gt=0)
    projection_hidden: int = Field(default=64, gt=0)
    projection_dim: int = Field(default=32, gt=0)
    num_classes: int = Field(default=10, gt=0)
    seed: int = 0

    @field_validator("channels")
    @classmethod
    def _positive_channels(cls, value: list[int]) -> list[int]:
        if len(value) != 2 or any(c <= 0 for c in value):
            raise ValueError(f"channels must be two positive widths, got {value}")
        return value


@dataclass
class Model:
    """
    Base encoder f, projection head g and classifier.

    The encoder ends in global average pooling so its output h is a vector of
    length embedding_dim; the classifier reads the same h.
    """

    config: ModelConfig
    encoder: Sequential
    projection_head: Sequential
    classifier: Linear
    phase: str = "init"
    quantized: dict[str, QuantizedLayerView] = field(default_factory=dict)

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def group(self, name: ParameterGroup) -> Layer:
        return {
            "encoder": self.encoder,
            "projection_head": self.projection_head,
            "classifier": self.classifier,
        }[name]

    def parameters(self, groups: Iterable[ParameterGroup] = ALL_GROUPS) -> list[Parameter]:
        return [p for g in groups for p in self.group(g).parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def weight_layers(self) -> dict[str, WeightLayer]:
        """Weight-bearing layers in forward order, keyed by dotted name."""
        layers: list[WeightLayer] = [
            *self.encoder.weight_layers(),
            *self.projection_head.weight_layers(),
            self.classifier,
        ]
        return {layer.name: layer for layer in layers}

    def layer(self, name: str) -> WeightLayer:
        layers = self.weight_layers()
        if name not in layers:
            raise ModelConfigError(
                f"unknown layer {name!r}; weight-bearing layers: {', '.join(layers)}"
            )
        return layers[name]

    def layer_param_counts(self) -> dict[str, int]:
        return {name: layer.param_count for name, layer in self.weight_layers().items()}

    def clone(self) -> Model:
        """Deep copy, including quantized views."""
        return copy.deepcopy(self)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise ModelConfigError(f"state mismatch: missing={missing}, unexpected={unexpected}")
        for name, param in params.items():
            values = np.asarray(state[name])
            if values.shape != param.shape:
                raise ShapeError(
                    f"parameter {name}: expected shape {param.shape}, got {values.shape}"
                )
            param.assign(values)

    def fingerprint(self, groups: Iterable[ParameterGroup] = ALL_GROUPS) -> str:
        """SHA-256 over the names and raw bytes of the selected parameter groups."""
        digest = hashlib.sha256()
        for p in self.parameters(groups):
            digest.update(p.name.encode("utf-8"))
            digest.update(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        return digest.hexdigest()

    def release_quantization(self, layers: Iterable[str] | None = None) -> None:
        """Drop quantized views; the dequantized weights stay installed as floats."""
        names = list(self.quantized) if layers is None else list(layers)
        for name in names:
            self.quantized.pop(name, None)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


def _build_encoder(config: ModelConfig, rng: np.random.Generator) -> Sequential:
    c1, c2 = config.channels
    emb = config.embedding_dim
    cin = config.in_channels
    if config.preset == "tiny":
        layers: list[Layer] = [
            Conv2d("encoder.conv1", cin, c1, 3, rng, padding=1),
            ReLU("encoder.relu1"),
            MaxPool2d("encoder.pool1"),
            Conv2d("encoder.conv2", c1, c2, 3, rng, padding=1),
            ReLU("encoder.relu2"),
            MaxPool2d("encoder.pool2"),
            Conv2d("encoder.conv3", c2, emb, 3, rng, padding=1),
            ReLU("encoder.relu3"),
            GlobalAvgPool("encoder.gap"),
        ]
    else:
        layers = [
            Conv2d("encoder.stem", cin, c1, 3, rng, padding=1),
            ReLU("encoder.stem_relu"),
            MaxPool2d("encoder.pool1"),
            ResidualBlock("encoder.block1", c1, c2, rng),
            MaxPool2d("encoder.pool2"),
            ResidualBlock("encoder.block2", c2, emb, rng),
            GlobalAvgPool("encoder.gap"),
        ]
    return Sequential("encoder", layers)


def build_model(config: ModelConfig | Mapping[str, Any] | None = None) -> Model:
    """
    Build a deterministically initialised model.

    Conv and FC weights use He-uniform initialisation drawn from a generator
    seeded by config.seed, in forward order; biases start at zero.

    Raises:
        ModelConfigError: invalid dimensions or unknown preset
    """
    if config is None:
        config = ModelConfig()
    elif not isinstance(config, ModelConfig):
        try:
            config = ModelConfig.model_validate(dict(config))
        except ValidationError as e:
            raise ModelConfigError(f"invalid model config: {e}") from e
    if config.image_size < 4:
        raise ModelConfigError(f"image_size must be at least 4 for two 2x2 pools, got {config.image_size}")
    if config.embedding_dim < config.num_classes:
        logger.warning(
            "embedding_dim below num_classes",
            embedding_dim=config.embedding_dim,
            num_classes=config.num_classes,
        )

    rng = np.random.default_rng(config.seed)
    encoder = _build_encoder(config, rng)
    projection_head = Sequential(
        "projection_head",
        [
            Linear("projection_head.fc1", config.embedding_dim, config.projection_hidden, rng),
            ReLU("projection_head.relu"),
            Linear("projection_head.fc2", config.projection_hidden, config.projection_dim, rng),
        ],
    )
    classifier = Linear("classifier", config.embedding_dim, config.num_classes, rng)
    model = Model(config, encoder, projection_head, classifier)
    logger.debug(
        "Model built",
        preset=config.preset,
        seed=config.seed,
        params=sum(model.layer_param_counts().values()),
    )
    return model


def _as_input(model: Model, images: Tensor | np.ndarray) -> Tensor:
    x = images if isinstance(images, Tensor) else Tensor(images)
    expected = model.config.in_channels
    if x.ndim != 4 or x.shape[1] != expected:
        raise ShapeError(f"encode expects (B, {expected}, H, W) images, got shape {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise InvalidInputError("encode received non-finite pixel values")
    return x


def encode(model: Model, images: Tensor | np.ndarray) -> Tensor:
    """h = f(x): (B, C, H, W) -> (B, embedding_dim), recorded on the tape."""
    return model.encoder(_as_input(model, images))


def _check_embedding(model: Model, h: Tensor) -> None:
    if h.ndim != 2 or h.shape[1] != model.embedding_dim:
        raise ShapeError(
            f"expected embeddings of shape (B, {model.embedding_dim}), got {h.shape}"
        )


def project(model: Model, h: Tensor) -> Tensor:
    """z = g(h) through the one-hidden-layer projection head."""
    _check_embedding(model, h)
    return model.projection_head(h)


def classify(model: Model, h: Tensor) -> Tensor:
    """Class logits from the FC classifier."""
    _check_embedding(model, h)
    return model.classifier(h)


def predict_logits(model: Model, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Batched no-grad logits for float images in [0, 1]."""
    chunks = []
    with no_grad():
        for start in range(0, images.shape[0], batch_size):
            h = encode(model, images[start : start + batch_size])
            chunks.append(classify(model, h).data)
    if not chunks:
        return np.zeros((0, model.num_classes), dtype=np.float32)
    return np.concatenate(chunks, axis=0)


def predict(model: Model, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Predicted labels (argmax of logits; ties go to the lowest class index)."""
    return predict_logits(model, images, batch_size).argmax(axis=1)


def evaluate_accuracy(
    model: Model, images: np.ndarray, labels: np.ndarray, batch_size: int = 256
) -> float:
    """Top-1 accuracy as a fraction in [0, 1]."""
    if images.shape[0] == 0:
        raise InvalidInputError("cannot evaluate accuracy on an empty set")
    preds = predict(model, images, batch_size)
    return float(np.mean(preds == np.asarray(labels)))
