"""Discriminator: conv stack down to 4x4 with a penultimate feature tap."""

from __future__ import annotations

import numpy as np

from . import grad as gr
from .config import ModelConfig
from .errors import ShapeError
from .grad import Tensor
from .nets import EqConv2d, EqLinear, act, collect


class ConvTrunk:
    """img_res -> 4x4 conv pyramid shared by the discriminator and the encoder."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        res, c_prev = cfg.img_res, 3
        self.convs: list[EqConv2d] = []
        for c in cfg.disc_channels:
            self.convs.append(EqConv2d(rng, c_prev, c))
            c_prev = c
            res //= 2
        self.out_res = cfg.img_res // (2 ** len(cfg.disc_channels))
        self.flat_dim = c_prev * self.out_res * self.out_res

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[-1] != self.cfg.img_res:
            raise ShapeError(f"expected [B, 3, {self.cfg.img_res}, {self.cfg.img_res}], "
                             f"got {x.shape}")
        for conv in self.convs:
            x = gr.avg_pool2x2(act(conv(x)))
        return gr.reshape(x, (x.shape[0], self.flat_dim))

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, conv in enumerate(self.convs):
            out.update(conv.params(f"{prefix}.conv{i}"))
        return out


class Discriminator:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.trunk = ConvTrunk(cfg, rng)
        self.fc = EqLinear(rng, self.trunk.flat_dim, cfg.disc_feat)
        self.out = EqLinear(rng, cfg.disc_feat, 1)

    def params(self) -> dict[str, Tensor]:
        out = self.trunk.params("trunk")
        out.update(collect(("fc", self.fc), ("out", self.out)))
        return out

    def forward(self, images: Tensor) -> tuple[Tensor, Tensor]:
        """Returns (score [B], penultimate features [B, disc_feat])."""
        feats = act(self.fc(self.trunk(images)))
        score = gr.reshape(self.out(feats), (images.shape[0],))
        return score, feats

    __call__ = forward

    def features(self, images: Tensor) -> Tensor:
        return self.forward(images)[1]
