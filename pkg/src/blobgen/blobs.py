"""Blob scenes and the differentiable splatting pipeline.

A blob is a soft ellipse: center ``x`` in normalized [0,1]^2 coordinates,
size scalar ``s`` (shifts the opacity sigmoid), aspect ratio ``a``, rotation
``theta``, plus a structure feature ``phi`` and a style feature ``psi``, both
unit vectors. Scenes are depth-ordered blob lists over a background; the last
blob is topmost.

Grid convention: pixel (h, w) maps to the point (w/W, h/H), first coordinate
horizontal, image row 0 at top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import grad as gr
from .errors import DomainError, ShapeError
from .grad import Tensor

DEFAULT_SHARPNESS = 0.02  # ellipse edge sharpness constant
REMOVE_SIZE = -10.0       # size override that turns a blob off (opacity < 5e-5)

# uniform jitter half-widths used during training
JITTER_XY = 0.04
JITTER_SIZE = 0.5
JITTER_ANGLE = 0.1


def wrap_angle(theta: float) -> float:
    """Wrap to [-pi, pi]."""
    return float((theta + math.pi) % (2.0 * math.pi) - math.pi)


@dataclass
class Blob:
    x: np.ndarray          # [2] center, normalized coordinates
    s: float               # size scalar (sigmoid shift)
    a: float               # aspect ratio, > 0
    theta: float           # radians in [-pi, pi]
    phi: np.ndarray        # [d_in] unit structure feature
    psi: np.ndarray        # [d_style] unit style feature
    psi_border: np.ndarray | None = None  # style to blend toward at the blob border

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32).reshape(2)
        self.s = float(self.s)
        self.a = float(self.a)
        if not self.a > 0:
            raise DomainError(f"aspect ratio must be positive, got {self.a}")
        self.theta = wrap_angle(float(self.theta))
        self.phi = _unit_feature(self.phi, "phi")
        self.psi = _unit_feature(self.psi, "psi")
        if self.psi_border is not None:
            self.psi_border = _unit_feature(self.psi_border, "psi_border")


def _unit_feature(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float32).reshape(-1)
    n = float(np.linalg.norm(v))
    if abs(n - 1.0) > 1e-3:
        raise DomainError(f"{name} must be a unit vector, got norm {n:.6f}")
    return v


@dataclass
class BlobScene:
    """Depth-ordered blobs over a background; the editable unit.

    List order is the depth order: the last blob is topmost (unoccluded).
    Background opacity is fixed at 1.
    """

    blobs: list[Blob]
    phi_bg: np.ndarray
    psi_bg: np.ndarray

    def __post_init__(self):
        self.phi_bg = _unit_feature(self.phi_bg, "phi_bg")
        self.psi_bg = _unit_feature(self.psi_bg, "psi_bg")
        for b in self.blobs:
            if b.phi.shape != self.phi_bg.shape:
                raise ShapeError("blob phi dimension differs from background")
            if b.psi.shape != self.psi_bg.shape:
                raise ShapeError("blob psi dimension differs from background")

    @property
    def k(self) -> int:
        return len(self.blobs)

    @property
    def d_in(self) -> int:
        return self.phi_bg.shape[0]

    @property
    def d_style(self) -> int:
        return self.psi_bg.shape[0]

    def copy(self) -> "BlobScene":
        return BlobScene(
            [replace(b, x=b.x.copy(), phi=b.phi.copy(), psi=b.psi.copy(),
                     psi_border=None if b.psi_border is None else b.psi_border.copy())
             for b in self.blobs],
            self.phi_bg.copy(), self.psi_bg.copy())


@dataclass
class AlphaMaps:
    """Per-blob opacities and composited weights for one scene."""

    opacity: np.ndarray    # [k, H, W] in [0, 1]
    alpha: np.ndarray      # [k+1, H, W]; index 0 is the background
    sharpness_c: float


@dataclass
class FeatureGrids:
    """Splatted structure grid plus per-resolution style grids."""

    structure: Tensor                 # [B, d_in, H0, W0]
    styles: dict[int, Tensor] = field(default_factory=dict)  # res -> [B, d_style, res, res]


# ---------------------------------------------------------------------------
# tensor-level core (batched, differentiable)
# ---------------------------------------------------------------------------

_GRID_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def coord_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal and vertical coordinate planes, each [h, w] float32."""
    if h <= 0 or w <= 0:
        raise DomainError(f"grid extents must be positive, got {h}x{w}")
    key = (h, w)
    if key not in _GRID_CACHE:
        gx = (np.arange(w, dtype=np.float32) / np.float32(w))[None, :].repeat(h, axis=0)
        gy = (np.arange(h, dtype=np.float32) / np.float32(h))[:, None].repeat(w, axis=1)
        gx.setflags(write=False)
        gy.setflags(write=False)
        _GRID_CACHE[key] = (gx, gy)
    return _GRID_CACHE[key]


def _spread(t: Tensor) -> Tensor:
    """Append two singleton axes so a per-blob scalar broadcasts over a grid."""
    return gr.reshape(t, t.shape + (1, 1))


def inverse_covariance_terms(a: Tensor, theta: Tensor, c: float) -> tuple[Tensor, Tensor, Tensor]:
    """Entries (m00, m01, m11) of (R Sigma R^T)^-1 with Sigma = c*diag(a, 1/a)."""
    if c <= 0:
        raise DomainError(f"sharpness constant must be positive, got {c}")
    i0 = gr.div(1.0 / c, a)
    i1 = gr.mul(a, 1.0 / c)
    ct, st_ = gr.cos(theta), gr.sin(theta)
    c2, s2 = gr.square(ct), gr.square(st_)
    m00 = gr.add(gr.mul(i0, c2), gr.mul(i1, s2))
    m11 = gr.add(gr.mul(i0, s2), gr.mul(i1, c2))
    m01 = gr.mul(gr.sub(i0, i1), gr.mul(st_, ct))
    return m00, m01, m11


def mahalanobis_core(x: Tensor, a: Tensor, theta: Tensor, h: int, w: int,
                     c: float = DEFAULT_SHARPNESS) -> Tensor:
    """Squared Mahalanobis distance d(p, x) on an h*w grid; [..., h, w]."""
    gx, gy = coord_grid(h, w)
    m00, m01, m11 = inverse_covariance_terms(a, theta, c)
    u = gr.sub(Tensor(gx), _spread(x[..., 0]))
    v = gr.sub(Tensor(gy), _spread(x[..., 1]))
    return gr.add(
        gr.add(gr.mul(_spread(m00), gr.square(u)),
               gr.mul(_spread(gr.mul(m01, 2.0)), gr.mul(u, v))),
        gr.mul(_spread(m11), gr.square(v)))


def opacity_core(x: Tensor, s: Tensor, a: Tensor, theta: Tensor, h: int, w: int,
                 c: float = DEFAULT_SHARPNESS) -> Tensor:
    """Blob opacity map sigmoid(s - d); [..., h, w]."""
    d = mahalanobis_core(x, a, theta, h, w, c)
    return gr.sigmoid(gr.sub(_spread(s), d))


def composite_core(opacity: Tensor) -> Tensor:
    """Back-to-front alpha compositing over a fixed opacity-1 background.

    opacity: [..., k, h, w] -> alpha: [..., k+1, h, w], index 0 = background.
    alpha_i = o_i * prod_{j>i} (1 - o_j); the topmost product is empty (= 1).
    """
    k = opacity.shape[-3]
    grid_shape = opacity.shape[:-3] + (1,) + opacity.shape[-2:]
    trans = Tensor(np.ones(grid_shape, dtype=np.float32))
    layers: list[Tensor] = []
    for i in range(k - 1, -1, -1):
        oi = opacity[..., i:i + 1, :, :]
        layers.append(gr.mul(oi, trans))
        trans = gr.mul(trans, gr.sub(1.0, oi))
    layers.append(trans)  # background: o_0 = 1
    return gr.concat(list(reversed(layers)), axis=-3)


def splat_core(alpha: Tensor, features: Tensor) -> Tensor:
    """Weighted write of per-layer features onto the grid.

    alpha: [..., k+1, h, w], features: [..., k+1, d] -> [..., d, h, w].
    Row 0 of ``features`` is the background vector.
    """
    if alpha.shape[-3] != features.shape[-2]:
        raise ShapeError(
            f"layer count mismatch: alpha has {alpha.shape[-3]}, features {features.shape[-2]}")
    lead = alpha.shape[:-3]
    kp1, h, w = alpha.shape[-3:]
    d = features.shape[-1]
    amat = gr.reshape(alpha, lead + (kp1, h * w))
    fmat = gr.transpose(features, tuple(range(len(lead))) + (len(lead) + 1, len(lead)))
    out = gr.matmul(fmat, amat)
    return gr.reshape(out, lead + (d, h, w))


def style_features_with_border(alpha: Tensor, psi: Tensor, psi_bg: Tensor,
                               psi_border: Tensor, border_mask: np.ndarray) -> Tensor:
    """Style splat where flagged blobs blend toward a border vector.

    Where a flagged blob and the background are both visible, the background's
    contribution is steered toward the blob's border vector (for a style swap,
    the *target* scene's background):

        splat(p) + min(alpha_i(p), alpha_bg(p)) * (border_i - psi_bg)

    The blob core stays pure psi_i, far pixels keep the scene background, and
    the correction vanishes when border_i equals the scene background (so a
    self-swap renders identically).

    alpha [k+1, h, w]; psi [k, d]; psi_bg [d]; psi_border [k, d]; mask [k] bool.
    Single-scene only (no batch axis).
    """
    k = psi.shape[0]
    feats = gr.concat([gr.reshape(psi_bg, (1, -1)), psi], axis=0)
    base = splat_core(alpha, feats)
    a_bg = alpha[0:1, :, :]
    extra = None
    for i in range(k):
        if not border_mask[i]:
            continue
        w_edge = gr.minimum(alpha[i + 1:i + 2, :, :], a_bg)
        delta = gr.reshape(gr.sub(psi_border[i], psi_bg), (-1, 1, 1))
        term = gr.mul(w_edge, delta)
        extra = term if extra is None else gr.add(extra, term)
    return base if extra is None else gr.add(base, extra)


def jitter_core(x: Tensor, s: Tensor, theta: Tensor, rng: np.random.Generator,
                dx: float = JITTER_XY, ds: float = JITTER_SIZE,
                dtheta: float = JITTER_ANGLE) -> tuple[Tensor, Tensor, Tensor]:
    """Uniform perturbation of centers, sizes, and angles (independent per blob)."""
    nx = rng.uniform(-dx, dx, size=x.shape).astype(np.float32)
    ns = rng.uniform(-ds, ds, size=s.shape).astype(np.float32)
    nt = rng.uniform(-dtheta, dtheta, size=theta.shape).astype(np.float32)
    return gr.add(x, Tensor(nx)), gr.add(s, Tensor(ns)), gr.add(theta, Tensor(nt))


# ---------------------------------------------------------------------------
# batched scene tensors
# ---------------------------------------------------------------------------

@dataclass
class SceneTensors:
    """Batched scene parameters as tape tensors; the differentiable view."""

    x: Tensor        # [B, k, 2]
    s: Tensor        # [B, k]
    a: Tensor        # [B, k]
    theta: Tensor    # [B, k]
    phi: Tensor      # [B, k, d_in]
    psi: Tensor      # [B, k, d_style]
    phi_bg: Tensor   # [B, d_in]
    psi_bg: Tensor   # [B, d_style]
    psi_border: Tensor | None = None     # [B, k, d_style]
    border_mask: np.ndarray | None = None  # [k] bool, single-scene edits only

    @property
    def batch(self) -> int:
        return self.x.shape[0]

    @property
    def k(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_scenes(cls, scenes: list[BlobScene]) -> "SceneTensors":
        if not scenes:
            raise DomainError("need at least one scene")
        k = scenes[0].k
        if any(sc.k != k for sc in scenes):
            raise ShapeError("all scenes in a batch need the same blob count")
        pack = lambda get: Tensor(np.stack([get(sc) for sc in scenes]))
        border_mask = None
        psi_border = None
        if len(scenes) == 1 and any(b.psi_border is not None for b in scenes[0].blobs):
            sc = scenes[0]
            border_mask = np.array([b.psi_border is not None for b in sc.blobs])
            psi_border = Tensor(np.stack(
                [b.psi_border if b.psi_border is not None else b.psi for b in sc.blobs])[None])
        return cls(
            x=pack(lambda sc: np.stack([b.x for b in sc.blobs]) if k else np.zeros((0, 2), np.float32)),
            s=pack(lambda sc: np.array([b.s for b in sc.blobs], np.float32)),
            a=pack(lambda sc: np.array([b.a for b in sc.blobs], np.float32)),
            theta=pack(lambda sc: np.array([b.theta for b in sc.blobs], np.float32)),
            phi=pack(lambda sc: np.stack([b.phi for b in sc.blobs]) if k else np.zeros((0, sc.d_in), np.float32)),
            psi=pack(lambda sc: np.stack([b.psi for b in sc.blobs]) if k else np.zeros((0, sc.d_style), np.float32)),
            phi_bg=pack(lambda sc: sc.phi_bg),
            psi_bg=pack(lambda sc: sc.psi_bg),
            psi_border=psi_border,
            border_mask=border_mask,
        )

    @classmethod
    def from_scene(cls, scene: BlobScene) -> "SceneTensors":
        return cls.from_scenes([scene])

    def scene(self, b: int = 0) -> BlobScene:
        blobs = []
        for i in range(self.k):
            border = None
            if self.border_mask is not None and self.border_mask[i]:
                border = self.psi_border.data[b, i].copy()
            blobs.append(Blob(
                x=self.x.data[b, i].copy(), s=float(self.s.data[b, i]),
                a=float(self.a.data[b, i]), theta=float(self.theta.data[b, i]),
                phi=self.phi.data[b, i].copy(), psi=self.psi.data[b, i].copy(),
                psi_border=border))
        return BlobScene(blobs, self.phi_bg.data[b].copy(), self.psi_bg.data[b].copy())

    def opacities(self, h: int, w: int, c: float = DEFAULT_SHARPNESS) -> Tensor:
        """[B, k, h, w] blob opacity maps."""
        return opacity_core(self.x, self.s, self.a, self.theta, h, w, c)

    def alphas(self, h: int, w: int, c: float = DEFAULT_SHARPNESS) -> Tensor:
        return composite_core(self.opacities(h, w, c))

    def splat_structure(self, alpha: Tensor) -> Tensor:
        feats = gr.concat([gr.reshape(self.phi_bg, (self.batch, 1, -1)), self.phi], axis=1)
        return splat_core(alpha, feats)

    def splat_style(self, alpha: Tensor) -> Tensor:
        if self.border_mask is not None and self.border_mask.any():
            if self.batch != 1:
                raise DomainError("border-interpolated splatting is single-scene only")
            out = style_features_with_border(
                alpha[0], self.psi[0], self.psi_bg[0], self.psi_border[0], self.border_mask)
            return gr.reshape(out, (1,) + out.shape)
        feats = gr.concat([gr.reshape(self.psi_bg, (self.batch, 1, -1)), self.psi], axis=1)
        return splat_core(alpha, feats)

    def feature_grids(self, base_res: int, style_resolutions: list[int],
                      c: float = DEFAULT_SHARPNESS) -> FeatureGrids:
        """One opacity/alpha computation per resolution, then splat."""
        alphas = {r: self.alphas(r, r, c) for r in sorted(set([base_res] + list(style_resolutions)))}
        grids = FeatureGrids(structure=self.splat_structure(alphas[base_res]))
        for r in style_resolutions:
            grids.styles[r] = self.splat_style(alphas[r])
        return grids


# ---------------------------------------------------------------------------
# single-scene surface
# ---------------------------------------------------------------------------

def blob_covariance(a: float, theta: float, c: float = DEFAULT_SHARPNESS) -> np.ndarray:
    """Covariance R Sigma R^T of the blob ellipse; symmetric PD with det c^2."""
    if not a > 0:
        raise DomainError(f"aspect ratio must be positive, got {a}")
    if not c > 0:
        raise DomainError(f"sharpness constant must be positive, got {c}")
    ct, st = math.cos(theta), math.sin(theta)
    s00, s11 = c * a, c / a
    return np.array([
        [s00 * ct * ct + s11 * st * st, (s00 - s11) * st * ct],
        [(s00 - s11) * st * ct, s00 * st * st + s11 * ct * ct],
    ], dtype=np.float32)


def mahalanobis_grid(blob: Blob, h: int, w: int, c: float = DEFAULT_SHARPNESS) -> np.ndarray:
    if not c > 0:
        raise DomainError(f"sharpness constant must be positive, got {c}")
    out = mahalanobis_core(Tensor(blob.x), Tensor(blob.a), Tensor(blob.theta), h, w, c)
    return out.data


def opacity_map(blob: Blob, h: int, w: int, c: float = DEFAULT_SHARPNESS) -> np.ndarray:
    out = opacity_core(Tensor(blob.x), Tensor(blob.s), Tensor(blob.a),
                       Tensor(blob.theta), h, w, c)
    return out.data


def composite(opacity: np.ndarray) -> np.ndarray:
    """[k, h, w] opacities -> [k+1, h, w] composited alphas (index 0 = background)."""
    opacity = np.asarray(opacity, dtype=np.float32)
    if opacity.ndim != 3:
        raise ShapeError(f"composite expects [k, h, w], got {opacity.shape}")
    return composite_core(Tensor(opacity)).data


def scene_alpha_maps(scene: BlobScene, h: int, w: int,
                     c: float = DEFAULT_SHARPNESS) -> AlphaMaps:
    st = SceneTensors.from_scene(scene)
    o = st.opacities(h, w, c)
    return AlphaMaps(opacity=o.data[0], alpha=composite_core(o).data[0], sharpness_c=c)


def splat(scene: BlobScene, alpha: np.ndarray, which: str = "structure") -> np.ndarray:
    """Splat scene features through given [k+1, h, w] alphas -> [d, h, w]."""
    if which not in ("structure", "style"):
        raise DomainError(f"which must be 'structure' or 'style', got {which!r}")
    alpha = np.asarray(alpha, dtype=np.float32)
    if alpha.ndim != 3 or alpha.shape[0] != scene.k + 1:
        raise ShapeError(f"alpha must be [k+1, h, w] with k={scene.k}, got {alpha.shape}")
    st = SceneTensors.from_scene(scene)
    at = Tensor(alpha[None])
    out = st.splat_structure(at) if which == "structure" else st.splat_style(at)
    return out.data[0]


def jitter(scene: BlobScene, rng: np.random.Generator,
           dx: float = JITTER_XY, ds: float = JITTER_SIZE,
           dtheta: float = JITTER_ANGLE) -> BlobScene:
    """Independent uniform perturbation of each blob's x, s, theta."""
    out = scene.copy()
    for b in out.blobs:
        b.x = (b.x + rng.uniform(-dx, dx, size=2).astype(np.float32)).astype(np.float32)
        b.s = float(b.s + rng.uniform(-ds, ds))
        b.theta = wrap_angle(b.theta + float(rng.uniform(-dtheta, dtheta)))
    return out
