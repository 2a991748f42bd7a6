"""
Network layers built on the tensor core.

Weight-bearing layers (Conv2d, Linear) own named Parameters and are the
units that attacks address by name ("encoder.conv2", "classifier").
"""

from __future__ import annotations

from abc import ABC, abstractmethod

import numpy as np

from src.core import ops
from src.core.optim import Parameter
from src.core.tensor import Tensor


class Layer(ABC):
    """Base class: a named forward transform with optional parameters."""

    def __init__(self, name: str) -> None:
        self.name = name

    @abstractmethod
    def forward(self, x: Tensor) -> Tensor:
        """Apply the layer."""

    def parameters(self) -> list[Parameter]:
        return []

    def weight_layers(self) -> list[WeightLayer]:
        return []

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


class WeightLayer(Layer):
    """Layer holding a weight and a bias parameter."""

    weight: Parameter
    bias: Parameter

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def weight_layers(self) -> list[WeightLayer]:
        return [self]

    @property
    def param_count(self) -> int:
        return self.weight.size + self.bias.size


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """He-uniform initialisation: U(-sqrt(6/fan_in), sqrt(6/fan_in))."""
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(WeightLayer):
    """Square-kernel convolution with bias."""

    def __init__(
        self,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        padding: int = 0,
        stride: int = 1,
    ) -> None:
        super().__init__(name)
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(he_uniform(rng, shape, fan_in), f"{name}.weight")
        self.bias = Parameter(np.zeros(out_channels, dtype=np.float32), f"{name}.bias")
        self.padding = padding
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(WeightLayer):
    """Fully connected layer, weight shaped (out_features, in_features)."""

    def __init__(
        self, name: str, in_features: int, out_features: int, rng: np.random.Generator
    ) -> None:
        super().__init__(name)
        self.weight = Parameter(
            he_uniform(rng, (out_features, in_features), in_features), f"{name}.weight"
        )
        self.bias = Parameter(np.zeros(out_features, dtype=np.float32), f"{name}.bias")
        self.in_features = in_features
        self.out_features = out_features

    def forward(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class ReLU(Layer):
    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(x)


class MaxPool2d(Layer):
    def __init__(self, name: str, kernel: int = 2) -> None:
        super().__init__(name)
        self.kernel = kernel

    def forward(self, x: Tensor) -> Tensor:
        return ops.max_pool2d(x, self.kernel)


class GlobalAvgPool(Layer):
    def forward(self, x: Tensor) -> Tensor:
        return ops.global_avg_pool(x)


class Sequential(Layer):
    """Ordered composition of layers."""

    def __init__(self, name: str, layers: list[Layer]) -> None:
        super().__init__(name)
        self.layers = layers

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def weight_layers(self) -> list[WeightLayer]:
        return [w for layer in self.layers for w in layer.weight_layers()]

    def __len__(self) -> int:
        return len(self.layers)


class ResidualBlock(Layer):
    """
    relu(conv_b(relu(conv_a(x))) + shortcut(x)), with a 1x1 projection
    shortcut when the channel count changes.
    """

    def __init__(
        self, name: str, in_channels: int, out_channels: int, rng: np.random.Generator
    ) -> None:
        super().__init__(name)
        self.conv_a = Conv2d(f"{name}.conv_a", in_channels, out_channels, 3, rng, padding=1)
        self.conv_b = Conv2d(f"{name}.conv_b", out_channels, out_channels, 3, rng, padding=1)
        self.shortcut = (
            Conv2d(f"{name}.shortcut", in_channels, out_channels, 1, rng)
            if in_channels != out_channels
            else None
        )

    def forward(self, x: Tensor) -> Tensor:
        out = self.conv_b(ops.relu(self.conv_a(x)))
        skip = self.shortcut(x) if self.shortcut is not None else x
        return ops.relu(ops.add(out, skip))

    def weight_layers(self) -> list[WeightLayer]:
        layers: list[WeightLayer] = [self.conv_a, self.conv_b]
        if self.shortcut is not None:
            layers.append(self.shortcut)
        return layers

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.weight_layers() for p in layer.parameters()]
