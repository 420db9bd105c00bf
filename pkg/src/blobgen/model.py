"""Bundle of the trained networks plus sampling and rendering entry points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grad as gr
from .blobs import BlobScene, SceneTensors
from .config import ModelConfig, TrainConfig
from .decoder import Decoder
from .discriminator import Discriminator
from .errors import DomainError, ShapeError
from .grad import Tensor
from .layout import LayoutNet
from .nets import set_params


@dataclass
class SceneModel:
    cfg: ModelConfig
    train_cfg: TrainConfig
    layout: LayoutNet
    decoder: Decoder
    disc: Discriminator | None = None
    encoder: "object | None" = None  # avoids a circular import; see inversion.Encoder
    ema_layout: dict[str, np.ndarray] | None = None
    ema_decoder: dict[str, np.ndarray] | None = None
    trunc_mean: np.ndarray | None = None
    step: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def create(cls, cfg: ModelConfig, train_cfg: TrainConfig | None = None,
               seed: int = 0, with_disc: bool = True) -> "SceneModel":
        train_cfg = train_cfg or TrainConfig(seed=seed)
        r = np.random.default_rng(np.random.SeedSequence([seed, 0xB10B]))
        model = cls(cfg=cfg, train_cfg=train_cfg,
                    layout=LayoutNet(cfg, r), decoder=Decoder(cfg, r),
                    disc=Discriminator(cfg, r) if with_disc else None)
        model.reset_ema()
        return model

    def reset_ema(self) -> None:
        self.ema_layout = {k: t.data.copy() for k, t in self.layout.params().items()}
        self.ema_decoder = {k: t.data.copy() for k, t in self.decoder.params().items()}

    # -- weights --------------------------------------------------------------
    def generator_params(self) -> dict[str, Tensor]:
        out = {f"layout.{k}": t for k, t in self.layout.params().items()}
        out.update({f"decoder.{k}": t for k, t in self.decoder.params().items()})
        return out

    def ema_view(self) -> "SceneModel":
        """A sampling copy whose layout/decoder carry the EMA weights."""
        view = SceneModel.create(self.cfg, self.train_cfg, seed=0, with_disc=False)
        set_params(view.layout.params(), self.ema_layout)
        set_params(view.decoder.params(), self.ema_decoder)
        view.trunc_mean = self.trunc_mean
        view.disc = self.disc
        view.step = self.step
        return view

    # -- sampling and rendering -----------------------------------------------
    def noise(self, rng: np.random.Generator, n: int = 1) -> Tensor:
        return Tensor(rng.standard_normal((n, self.cfg.d_noise)).astype(np.float32))

    def scene_tensors(self, z: Tensor, truncation: float = 1.0) -> SceneTensors:
        if truncation == 1.0:
            return self.layout.forward(z)
        return self.layout.truncate(z, truncation, self.trunc_mean)

    def sample_scene(self, seed: int, truncation: float = 1.0) -> BlobScene:
        z = self.noise(np.random.default_rng(seed))
        with gr.no_grad():
            return self.scene_tensors(z, truncation).scene(0)

    def render_tensors(self, st: SceneTensors,
                       structure_override: Tensor | None = None) -> Tensor:
        grids = st.feature_grids(self.cfg.base_res, self.cfg.style_resolutions,
                                 self.cfg.sharpness_c)
        if structure_override is not None:
            if structure_override.shape != grids.structure.shape:
                raise ShapeError(f"structure override {structure_override.shape} does not "
                                 f"match grid {grids.structure.shape}")
            grids.structure = structure_override
        return self.decoder(grids)

    def render_scene(self, scene: BlobScene,
                     structure_from: BlobScene | None = None) -> np.ndarray:
        """BlobScene -> [3, img_res, img_res] float image in [-1, 1].

        ``structure_from`` swaps in another scene's splatted structure grid,
        biasing the render toward that scene's coarse layout.
        """
        self.check_scene(scene)
        with gr.no_grad():
            override = None
            if structure_from is not None:
                self.check_scene(structure_from)
                src = SceneTensors.from_scene(structure_from)
                override = src.splat_structure(
                    src.alphas(self.cfg.base_res, self.cfg.base_res, self.cfg.sharpness_c))
            return self.render_tensors(SceneTensors.from_scene(scene), override).data[0]

    def generate(self, z: Tensor, truncation: float = 1.0) -> Tensor:
        return self.render_tensors(self.scene_tensors(z, truncation))

    def check_scene(self, scene: BlobScene) -> None:
        if scene.d_in != self.cfg.d_in or scene.d_style != self.cfg.d_style:
            raise ShapeError(
                f"scene features ({scene.d_in}, {scene.d_style}) do not match model "
                f"({self.cfg.d_in}, {self.cfg.d_style})")

    def ensure_trunc_mean(self, n: int = 10_000, seed: int = 1234) -> np.ndarray:
        """Estimate (once) the penultimate mean used by truncation."""
        if self.trunc_mean is None:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7A7C]))
            self.trunc_mean = self.layout.estimate_penultimate_mean(n, rng)
        return self.trunc_mean
