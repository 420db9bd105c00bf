"""Shared network layers: equalized-lr linear and convolution.

Weights are stored as unit-Gaussian raws and rescaled at runtime by
gain/sqrt(fan_in), so Adam sees comparable gradient scales everywhere.
"""

from __future__ import annotations

import math

import numpy as np

from . import grad as gr
from .grad import Tensor

ACT_GAIN = math.sqrt(2.0)  # applied after leaky ReLU to keep activation variance


def act(x: Tensor, slope: float = 0.2) -> Tensor:
    return gr.leaky_relu(x, slope, gain=ACT_GAIN)


class EqLinear:
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int,
                 gain: float = 1.0, bias_init: float | np.ndarray = 0.0):
        self.weight = Tensor(rng.standard_normal((d_out, d_in)).astype(np.float32),
                             requires_grad=True)
        bias = np.full(d_out, bias_init, dtype=np.float32) if np.isscalar(bias_init) \
            else np.asarray(bias_init, dtype=np.float32)
        self.bias = Tensor(bias, requires_grad=True)
        self.scale = gain / math.sqrt(d_in)

    def __call__(self, x: Tensor) -> Tensor:
        y = gr.mul(gr.matmul(x, gr.transpose(self.weight)), self.scale)
        return gr.add(y, self.bias)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


class EqConv2d:
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int,
                 kernel: int = 3, gain: float = 1.0):
        self.weight = Tensor(
            rng.standard_normal((c_out, c_in, kernel, kernel)).astype(np.float32),
            requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)
        self.scale = gain / math.sqrt(c_in * kernel * kernel)

    def __call__(self, x: Tensor) -> Tensor:
        return gr.conv2d(x, gr.mul(self.weight, self.scale), self.bias, padding="same")

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias}


def collect(*named_layers) -> dict[str, Tensor]:
    out: dict[str, Tensor] = {}
    for prefix, layer in named_layers:
        out.update(layer.params(prefix))
    return out


def set_params(params: dict[str, Tensor], values: dict[str, np.ndarray]) -> None:
    """Load raw arrays into an existing parameter dict (shapes must match)."""
    for name, tensor in params.items():
        v = values[name]
        if v.shape != tensor.data.shape:
            raise ValueError(f"shape mismatch for {name}: {v.shape} vs {tensor.data.shape}")
        tensor.data = np.asarray(v, dtype=np.float32, order="C").copy()
