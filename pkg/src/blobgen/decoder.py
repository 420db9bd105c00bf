"""Convolutional decoder with spatially modulated convolutions.

Each block multiplies its input per pixel by a channel-normalized affine
transform of the splatted style grid, then convolves with unit-normalized
weights:

    x_l = (x_{l-1} * f(style)/||f(style)||_2) conv w/||w||_2

The affine is normalized over channels per pixel; the weight over
(in-channel, kernel) per out-channel.
"""

from __future__ import annotations

import math

import numpy as np

from . import grad as gr
from .blobs import FeatureGrids
from .config import ModelConfig
from .errors import DomainError, ShapeError
from .grad import Tensor
from .nets import EqConv2d, act

_NORM_EPS = 1e-8


class ModulatedConv2d:
    """Per-pixel style modulation followed by weight-normalized convolution."""

    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int,
                 d_style: int, kernel: int = 3):
        self.c_in = c_in
        self.weight = Tensor(
            rng.standard_normal((c_out, c_in, kernel, kernel)).astype(np.float32),
            requires_grad=True)
        self.bias = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)
        # per-pixel affine style -> input channels; bias 1 so modulation starts neutral
        self.affine_w = Tensor(
            rng.standard_normal((c_in, d_style, 1, 1)).astype(np.float32),
            requires_grad=True)
        self.affine_b = Tensor(np.ones(c_in, dtype=np.float32), requires_grad=True)
        self.affine_scale = 1.0 / math.sqrt(d_style)

    def multiplier(self, style_grid: Tensor) -> Tensor:
        """Channel-normalized per-pixel modulation, unit L2 over channels."""
        m = gr.conv2d(style_grid, gr.mul(self.affine_w, self.affine_scale),
                      self.affine_b, padding="valid")
        norm = gr.sqrt(gr.add(gr.tsum(gr.square(m), axis=1, keepdims=True), _NORM_EPS))
        return gr.div(m, norm)

    def __call__(self, x: Tensor, style_grid: Tensor) -> Tensor:
        if x.shape[-2:] != style_grid.shape[-2:]:
            raise ShapeError(
                f"style grid {style_grid.shape[-2:]} does not match input {x.shape[-2:]}")
        wn = gr.div(self.weight, gr.sqrt(gr.add(
            gr.tsum(gr.square(self.weight), axis=(1, 2, 3), keepdims=True), _NORM_EPS)))
        return gr.conv2d(gr.mul(x, self.multiplier(style_grid)), wn, self.bias,
                         padding="same")

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.weight": self.weight, f"{prefix}.bias": self.bias,
                f"{prefix}.affine_w": self.affine_w, f"{prefix}.affine_b": self.affine_b}


class Decoder:
    """Structure grid in, image in [-1, 1] out; one modulated block per resolution."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        chans = [cfg.d_in] + list(cfg.decoder_channels)
        self.resolutions = cfg.style_resolutions
        self.blocks = [ModulatedConv2d(rng, chans[i], chans[i + 1], cfg.d_style)
                       for i in range(len(cfg.decoder_channels))]
        self.to_image = EqConv2d(rng, chans[-1], 3, kernel=1)

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for res, block in zip(self.resolutions, self.blocks):
            out.update(block.params(f"block{res}"))
        out.update(self.to_image.params("to_image"))
        return out

    def forward(self, grids: FeatureGrids) -> Tensor:
        x = grids.structure
        if x.shape[-1] != self.cfg.base_res:
            raise ShapeError(
                f"structure grid is {x.shape[-1]}, decoder expects {self.cfg.base_res}")
        for res, block in zip(self.resolutions, self.blocks):
            if x.shape[-1] != res:
                x = gr.upsample2x(x)
            style = grids.styles.get(res)
            if style is None:
                raise DomainError(f"missing style grid at resolution {res}")
            x = act(block(x, style))
        return gr.tanh(self.to_image(x))

    __call__ = forward
