"""Layout network: noise vector -> blob scene.

An 8-layer MLP emits one raw vector per batch sample, segmented into per-blob
parameters plus background features. Aspect ratio is decoded from two
sigmoided scalars with a fixed product, and the angle from a 2-vector axis,
both of which train more stably than direct regression.
"""

from __future__ import annotations

import numpy as np

from . import grad as gr
from .blobs import REMOVE_SIZE, BlobScene, SceneTensors
from .config import ModelConfig
from .errors import DomainError, StateError
from .grad import Tensor
from .nets import EqLinear, act, collect

ASPECT_FLOOR = 0.01  # keeps the decoded aspect ratio away from 0 and infinity


class LayoutNet:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        widths = [cfg.d_noise] + [cfg.d_hidden] * cfg.n_layers
        self.hidden = [EqLinear(rng, widths[i], widths[i + 1])
                       for i in range(cfg.n_layers)]
        # size-scalar biases start at +1 so every blob is visible at init
        head_bias = np.zeros(cfg.d_raw, dtype=np.float32)
        head_bias[np.arange(cfg.k) * cfg.blob_raw + 2] = 1.0
        self.head = EqLinear(rng, cfg.d_hidden, cfg.d_raw, bias_init=head_bias)

    def params(self) -> dict[str, Tensor]:
        named = [(f"fc{i}", l) for i, l in enumerate(self.hidden)] + [("head", self.head)]
        return collect(*named)

    # -- forward -------------------------------------------------------------
    def penultimate(self, z: Tensor) -> Tensor:
        """Activations feeding the head; the site of truncation blending."""
        if not np.isfinite(z.data).all():
            raise DomainError("noise vector must be finite")
        h = z
        for layer in self.hidden:
            h = act(layer(h))
        return h

    def raw(self, z: Tensor) -> Tensor:
        return self.head(self.penultimate(z))

    def decode_raw(self, raw: Tensor) -> SceneTensors:
        """Segment the flat head output into decoded scene tensors."""
        cfg = self.cfg
        b = raw.shape[0]
        k, p = cfg.k, cfg.blob_raw
        block = gr.reshape(raw[:, :k * p], (b, k, p))
        x = gr.sigmoid(block[:, :, 0:2])
        s = block[:, :, 2]
        # fixed-product normalization cancels the common scale, leaving the
        # ratio of the two sigmoids; the floor bounds the aspect to ~[1e-2, 1e2]
        # so saturated raws cannot blow up the inverse covariance gradients
        a0 = gr.add(gr.sigmoid(block[:, :, 3]), ASPECT_FLOOR)
        a1 = gr.add(gr.sigmoid(block[:, :, 4]), ASPECT_FLOOR)
        a = gr.div(a0, a1)
        theta = gr.atan2(block[:, :, 6], block[:, :, 5])
        phi = gr.l2_normalize(block[:, :, 7:7 + cfg.d_in], axis=-1)
        psi = gr.l2_normalize(block[:, :, 7 + cfg.d_in:p], axis=-1)
        tail = k * p
        phi_bg = gr.l2_normalize(raw[:, tail:tail + cfg.d_in], axis=-1)
        psi_bg = gr.l2_normalize(raw[:, tail + cfg.d_in:tail + cfg.d_in + cfg.d_style], axis=-1)
        return SceneTensors(x=x, s=s, a=a, theta=theta, phi=phi, psi=psi,
                            phi_bg=phi_bg, psi_bg=psi_bg)

    def forward(self, z: Tensor) -> SceneTensors:
        if z.ndim == 1:
            z = gr.reshape(z, (1, -1))
        return self.decode_raw(self.raw(z))

    __call__ = forward

    # -- truncation ----------------------------------------------------------
    def estimate_penultimate_mean(self, n: int, rng: np.random.Generator,
                                  chunk: int = 256) -> np.ndarray:
        """Mean penultimate activation over n random noise draws."""
        if n < 1:
            raise DomainError("need at least one sample for the mean estimate")
        total = np.zeros(self.cfg.d_hidden, dtype=np.float64)
        done = 0
        with gr.no_grad():
            while done < n:
                m = min(chunk, n - done)
                z = Tensor(rng.standard_normal((m, self.cfg.d_noise)).astype(np.float32))
                total += self.penultimate(z).data.sum(axis=0, dtype=np.float64)
                done += m
        return (total / n).astype(np.float32)

    def truncate(self, z: Tensor, w: float, mean_cache: np.ndarray | None) -> SceneTensors:
        """Blend penultimate activations toward their mean with weight w.

        w = 1 reproduces forward() exactly; w = 0 is z-independent.
        """
        if mean_cache is None or np.size(mean_cache) == 0:
            raise StateError("truncation needs a cached penultimate mean")
        if z.ndim == 1:
            z = gr.reshape(z, (1, -1))
        h = self.penultimate(z)
        mean = Tensor(np.asarray(mean_cache, dtype=np.float32))
        blended = gr.add(gr.mul(mean, 1.0 - w), gr.mul(h, float(w)))
        return self.decode_raw(self.head(blended))


def layout_forward(net: LayoutNet, z) -> BlobScene:
    """Single-noise-vector convenience: z [d_noise] -> BlobScene."""
    z = z if isinstance(z, Tensor) else Tensor(np.asarray(z, dtype=np.float32))
    return net.forward(z).scene(0)


def style_mix_tensors(st: SceneTensors, rng: np.random.Generator,
                      p: float = 0.2) -> SceneTensors:
    """With probability p, permute the style vectors of a uniform random
    subset of blob slots across the batch. Geometry and structure untouched.

    Harms training in practice; exposed as an opt-in flag.
    """
    b, k = st.batch, st.k
    if b < 2 or rng.random() >= p or k == 0:
        return st
    n_swap = int(rng.integers(0, k + 1))
    if n_swap == 0:
        return st
    slots = rng.choice(k, size=n_swap, replace=False)
    perm = rng.permutation(b)
    swapped = set(int(j) for j in slots)
    psi_perm = gr.concat([st.psi[int(src):int(src) + 1] for src in perm], axis=0)
    cols = [(psi_perm if j in swapped else st.psi)[:, j:j + 1, :] for j in range(k)]
    new_psi = gr.concat(cols, axis=1)
    return SceneTensors(x=st.x, s=st.s, a=st.a, theta=st.theta, phi=st.phi,
                        psi=new_psi, phi_bg=st.phi_bg, psi_bg=st.psi_bg)


def style_mix(scenes: list[BlobScene], rng: np.random.Generator,
              p: float = 0.2) -> list[BlobScene]:
    if len(scenes) < 2:
        return scenes
    st = style_mix_tensors(SceneTensors.from_scenes(scenes), rng, p)
    return [st.scene(i) for i in range(st.batch)]


def blob_dropout_tensors(st: SceneTensors, rng: np.random.Generator,
                         p: float) -> SceneTensors:
    """Turn off each blob with probability p by forcing a large negative size.

    Hurts training (some objects must always exist); opt-in only.
    """
    if p <= 0 or st.k == 0:
        return st
    keep = rng.random((st.batch, st.k)) >= p
    mask = Tensor(keep.astype(np.float32))
    s = gr.add(gr.mul(st.s, mask), gr.mul(gr.sub(1.0, mask), REMOVE_SIZE))
    return SceneTensors(x=st.x, s=s, a=st.a, theta=st.theta, phi=st.phi,
                        psi=st.psi, phi_bg=st.phi_bg, psi_bg=st.psi_bg)
