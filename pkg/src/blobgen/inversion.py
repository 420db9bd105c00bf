"""Image -> blob scene inversion: encoder prediction plus per-image refinement.

The encoder reuses the discriminator trunk and emits the layout network's raw
parameter vector, so encoded scenes decode through exactly the same code path
as sampled ones. Refinement then optimizes the decoded blob parameters
directly against pixel and feature reconstruction losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grad as gr
from .blobs import BlobScene, SceneTensors
from .config import ModelConfig
from .discriminator import ConvTrunk
from .grad import Adam, Tensor
from .model import SceneModel
from .nets import EqLinear, collect

BETA_MATCH_WEIGHT = 10.0  # strength of the blob-parameter reconstruction term


class Encoder:
    """Discriminator-shaped conv stack with a flat blob-parameter head."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.trunk = ConvTrunk(cfg, rng)
        self.fc = EqLinear(rng, self.trunk.flat_dim, cfg.disc_feat)
        self.head = EqLinear(rng, cfg.disc_feat, cfg.d_raw)

    def params(self) -> dict[str, Tensor]:
        out = self.trunk.params("trunk")
        out.update(collect(("fc", self.fc), ("head", self.head)))
        return out

    def raw(self, images: Tensor) -> Tensor:
        from .nets import act
        return self.head(act(self.fc(self.trunk(images))))

    def encode(self, images: Tensor, model: SceneModel) -> SceneTensors:
        """Decode through the layout network's shared raw-vector decoder."""
        return model.layout.decode_raw(self.raw(images))

    __call__ = raw


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _feature_l2(model: SceneModel, a: Tensor, b: Tensor) -> Tensor:
    """Perceptual stand-in: squared distance in frozen discriminator features."""
    fa = model.disc.features(a)
    fb = model.disc.features(b)
    return gr.tmean(gr.square(gr.sub(fa, fb)))


def _pixel_l2(a: Tensor, b: Tensor) -> Tensor:
    return gr.tmean(gr.square(gr.sub(a, b)))


def attribute_l2(pred: SceneTensors, target: SceneTensors) -> Tensor:
    """Mean of per-attribute mean-squared errors.

    A flat-vector L2 would drown the low-dimensional geometry in the feature
    dimensions; averaging per attribute keeps them comparable. The angle is
    compared through (cos, sin) to avoid the wrap discontinuity.
    """
    terms = [
        _pixel_l2(pred.x, target.x),
        _pixel_l2(pred.s, target.s),
        _pixel_l2(pred.a, target.a),
        gr.add(_pixel_l2(gr.cos(pred.theta), gr.cos(target.theta)),
               _pixel_l2(gr.sin(pred.theta), gr.sin(target.theta))),
        _pixel_l2(pred.phi, target.phi),
        _pixel_l2(pred.psi, target.psi),
        _pixel_l2(pred.phi_bg, target.phi_bg),
        _pixel_l2(pred.psi_bg, target.psi_bg),
    ]
    out = terms[0]
    for t in terms[1:]:
        out = gr.add(out, t)
    return gr.mul(out, 1.0 / len(terms))


def inversion_loss(model: SceneModel, encoder: Encoder,
                   x_real: Tensor, x_fake: Tensor, beta_fake: SceneTensors,
                   beta_weight: float = BETA_MATCH_WEIGHT) -> Tensor:
    """Reconstruction of real and fake images plus blob-parameter matching."""
    st_real = encoder.encode(x_real, model)
    st_fake = encoder.encode(x_fake, model)
    rec_real = model.render_tensors(st_real)
    rec_fake = model.render_tensors(st_fake)
    loss = _feature_l2(model, x_real, rec_real)
    loss = gr.add(loss, _feature_l2(model, x_fake, rec_fake))
    loss = gr.add(loss, _pixel_l2(x_real, rec_real))
    loss = gr.add(loss, _pixel_l2(x_fake, rec_fake))
    loss = gr.add(loss, gr.mul(attribute_l2(st_fake, beta_fake), beta_weight))
    return loss


def train_encoder(model: SceneModel, steps: int = 3000, batch: int = 16,
                  lr: float = 0.002, seed: int = 0, spec=None,
                  log_every: int = 200, verbose: bool = False) -> Encoder:
    """Fit an encoder against the frozen generator on a real/fake mix."""
    from .toydata import ToySceneSpec
    spec = spec or ToySceneSpec(canvas=model.cfg.img_res)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE11C]))
    enc = Encoder(model.cfg, np.random.default_rng(np.random.SeedSequence([seed, 0xE11D])))
    opt = Adam(enc.params(), lr=lr, beta1=0.0, beta2=0.99)
    half = max(1, batch // 2)
    for step in range(steps):
        real_np, _ = spec.sample_batch(rng, half)
        with gr.no_grad():
            z = model.noise(rng, half)
            beta = model.layout.forward(z)
            fake = model.render_tensors(beta)
        loss = inversion_loss(model, enc, Tensor(real_np), Tensor(fake.data), beta)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if verbose and step % log_every == 0:
            print(f"encoder step {step}: loss {loss.item():.5f}")
    return enc


# ---------------------------------------------------------------------------
# per-image refinement
# ---------------------------------------------------------------------------

@dataclass
class InversionResult:
    scene: BlobScene
    rmse: float
    encoder_rmse: float
    rmse_trace: list[float] = field(default_factory=list)
    diverged: bool = False


def _rmse(img: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(np.mean((img.astype(np.float64) - target.astype(np.float64)) ** 2)))


def invert(model: SceneModel, encoder: Encoder, image: np.ndarray,
           refine_steps: int = 200, lr: float = 0.01) -> InversionResult:
    """Encoder prediction refined by direct optimization of blob parameters.

    Tracks pixel RMSE each step and returns the best-so-far scene, so
    refinement can never end worse than the raw encoder output.
    """
    target = np.asarray(image, dtype=np.float32)[None] if image.ndim == 3 else np.asarray(image, dtype=np.float32)
    timg = Tensor(target)
    with gr.no_grad():
        st0 = encoder.encode(timg, model)

    # reparametrize so the optimizer cannot leave the valid domain:
    # a = exp(loga) > 0, features renormalized every step
    leaves = {
        "x": Tensor(st0.x.data.copy(), requires_grad=True),
        "s": Tensor(st0.s.data.copy(), requires_grad=True),
        "loga": Tensor(np.log(st0.a.data), requires_grad=True),
        "theta": Tensor(st0.theta.data.copy(), requires_grad=True),
        "phi": Tensor(st0.phi.data.copy(), requires_grad=True),
        "psi": Tensor(st0.psi.data.copy(), requires_grad=True),
        "phi_bg": Tensor(st0.phi_bg.data.copy(), requires_grad=True),
        "psi_bg": Tensor(st0.psi_bg.data.copy(), requires_grad=True),
    }

    def scene_tensors() -> SceneTensors:
        return SceneTensors(
            x=leaves["x"], s=leaves["s"], a=gr.exp(leaves["loga"]),
            theta=leaves["theta"],
            phi=gr.l2_normalize(leaves["phi"], axis=-1),
            psi=gr.l2_normalize(leaves["psi"], axis=-1),
            phi_bg=gr.l2_normalize(leaves["phi_bg"], axis=-1),
            psi_bg=gr.l2_normalize(leaves["psi_bg"], axis=-1))

    with gr.no_grad():
        first = model.render_tensors(scene_tensors())
    encoder_rmse = _rmse(first.data, target)
    best_rmse = encoder_rmse
    best_scene = scene_tensors().scene(0)
    trace = [encoder_rmse]
    diverged = False

    opt = Adam(leaves, lr=lr)
    for _ in range(refine_steps):
        st = scene_tensors()
        rec = model.render_tensors(st)
        loss = gr.add(_pixel_l2(rec, timg), _feature_l2(model, rec, timg))
        if not np.isfinite(loss.data).all():
            diverged = True
            break
        opt.zero_grad()
        loss.backward()
        opt.step()
        with gr.no_grad():
            cur = model.render_tensors(scene_tensors())
        rmse = _rmse(cur.data, target)
        trace.append(rmse)
        if rmse < best_rmse:
            best_rmse = rmse
            best_scene = scene_tensors().scene(0)
    return InversionResult(scene=best_scene, rmse=best_rmse,
                           encoder_rmse=encoder_rmse, rmse_trace=trace,
                           diverged=diverged)
