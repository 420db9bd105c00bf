"""Model and training configuration dataclasses.

Both serialize into checkpoint headers so a run is reproducible from its
artifacts alone.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .errors import FormatError


@dataclass
class ModelConfig:
    k: int = 5                      # blobs per scene
    d_in: int = 64                  # structure feature width
    d_style: int = 64               # style feature width
    d_noise: int = 128
    d_hidden: int = 256
    n_layers: int = 8               # hidden layers in the layout MLP
    sharpness_c: float = 0.02       # blob edge sharpness
    base_res: int = 8               # resolution of the structure grid
    img_res: int = 32
    decoder_channels: tuple[int, ...] = (64, 32, 16)
    disc_channels: tuple[int, ...] = (32, 64, 128)
    disc_feat: int = 128            # penultimate discriminator feature width

    # raw head widths: aspect and angle are two scalars each (decoded to one)
    GEOM_RAW: int = field(default=7, init=False, repr=False)

    @property
    def blob_raw(self) -> int:
        return self.GEOM_RAW + self.d_in + self.d_style

    @property
    def d_raw(self) -> int:
        return self.k * self.blob_raw + self.d_in + self.d_style

    @property
    def style_resolutions(self) -> list[int]:
        res, out = self.base_res, []
        for _ in self.decoder_channels:
            out.append(res)
            res *= 2
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("GEOM_RAW", None)
        d["decoder_channels"] = list(self.decoder_channels)
        d["disc_channels"] = list(self.disc_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(**{**d,
                          "decoder_channels": tuple(d["decoder_channels"]),
                          "disc_channels": tuple(d["disc_channels"])})
        except (KeyError, TypeError) as e:
            raise FormatError(f"bad model config: {e}") from e


@dataclass
class TrainConfig:
    lr: float = 0.002
    beta1: float = 0.0              # GAN-style Adam moments
    beta2: float = 0.99
    adam_eps: float = 1e-8
    r1_gamma: float = 100.0
    r1_period: int = 16             # lazy R1: applied (scaled by the period) every N steps
    ema_decay: float = 0.999
    batch_size: int = 16
    steps: int = 20_000
    jitter_xy: float = 0.04
    jitter_size: float = 0.5
    jitter_angle: float = 0.1
    style_mix_p: float = 0.0        # off by default: mixing styles harms training
    blob_dropout_p: float = 0.0     # off by default: dropping blobs harms training
    seed: int = 0
    act_gain: float = math.sqrt(2.0)   # post-activation gain under equalized lr
    weight_gain: float = 1.0           # runtime weight scale numerator
    checkpoint_every: int = 2000
    log_every: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        try:
            return cls(**d)
        except TypeError as e:
            raise FormatError(f"bad train config: {e}") from e
