"""Generative-quality and edit-fidelity metrics with pluggable extractors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import grad as gr
from .errors import DomainError
from .grad import Tensor
from .toydata import CATEGORY_INDEX, ToySceneSpec

COV_SHRINKAGE = 1e-6  # added to covariance diagonals so golden values reproduce


class DiscFeatureExtractor:
    """Frozen-discriminator penultimate features (the default extractor)."""

    def __init__(self, disc, batch: int = 64):
        self.disc = disc
        self.batch = batch

    def __call__(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        out = []
        with gr.no_grad():
            for i in range(0, len(images), self.batch):
                out.append(self.disc.features(Tensor(images[i:i + self.batch])).data)
        return np.concatenate(out) if out else np.zeros((0, 1), dtype=np.float32)


class PixelFeatureExtractor:
    """Downsampled raw pixels; a debugging extractor with no model dependence."""

    def __init__(self, res: int = 8):
        self.res = res

    def __call__(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images, dtype=np.float32)
        n, c, h, w = images.shape
        f = max(1, h // self.res)
        view = images[:, :, :h - h % f, :w - w % f]
        view = view.reshape(n, c, h // f, f, w // f, f).mean(axis=(3, 5))
        return view.reshape(n, -1)


# ---------------------------------------------------------------------------
# Frechet distance
# ---------------------------------------------------------------------------

def gaussian_fit(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or len(feats) < 2:
        raise DomainError("need a [n >= 2, d] feature matrix")
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False).reshape(feats.shape[1], feats.shape[1])
    cov += COV_SHRINKAGE * np.eye(feats.shape[1])
    return mu, cov


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_gaussian(mu_a: np.ndarray, cov_a: np.ndarray,
                     mu_b: np.ndarray, cov_b: np.ndarray) -> float:
    """||mu_a - mu_b||^2 + Tr(cov_a + cov_b - 2 (cov_a cov_b)^{1/2}).

    The cross term is computed as Tr sqrt(A^{1/2} B A^{1/2}) via
    eigendecomposition with eigenvalue clamping at zero.
    """
    mu_a, mu_b = np.asarray(mu_a, np.float64), np.asarray(mu_b, np.float64)
    cov_a, cov_b = np.asarray(cov_a, np.float64), np.asarray(cov_b, np.float64)
    a_half = _psd_sqrt(cov_a)
    inner = a_half @ cov_b @ a_half
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    d2 = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_cross)
    return max(d2, 0.0)


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    mu_a, cov_a = gaussian_fit(feats_a)
    mu_b, cov_b = gaussian_fit(feats_b)
    return frechet_gaussian(mu_a, cov_a, mu_b, cov_b)


# ---------------------------------------------------------------------------
# improved precision / recall
# ---------------------------------------------------------------------------

def _knn_radii(points: np.ndarray, nn_k: int) -> np.ndarray:
    d2 = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    return np.sqrt(np.partition(d2, nn_k - 1, axis=1)[:, nn_k - 1])


def _coverage(queries: np.ndarray, support: np.ndarray, radii: np.ndarray) -> float:
    d = np.sqrt(((queries[:, None, :] - support[None, :, :]) ** 2).sum(-1))
    return float((d <= radii[None, :]).any(axis=1).mean())


def precision_recall(feats_real: np.ndarray, feats_fake: np.ndarray,
                     nn_k: int = 3) -> tuple[float, float]:
    """kNN-manifold precision (fake covered by real) and recall (real by fake)."""
    real = np.asarray(feats_real, dtype=np.float64)
    fake = np.asarray(feats_fake, dtype=np.float64)
    if len(real) <= nn_k or len(fake) <= nn_k:
        raise DomainError(f"need more than nn_k={nn_k} samples on each side")
    precision = _coverage(fake, real, _knn_radii(real, nn_k))
    recall = _coverage(real, fake, _knn_radii(fake, nn_k))
    return precision, recall


# ---------------------------------------------------------------------------
# edit fidelity
# ---------------------------------------------------------------------------

def paired_distance(images_before: np.ndarray, images_after: np.ndarray,
                    extractor) -> float:
    """Mean feature distance between matched before/after pairs."""
    if len(images_before) != len(images_after):
        raise DomainError("paired distance needs equally many before and after images")
    fa = extractor(images_before).astype(np.float64)
    fb = extractor(images_after).astype(np.float64)
    return float(np.sqrt(((fa - fb) ** 2).sum(axis=1)).mean())


def global_diversity(images: np.ndarray, extractor) -> float:
    """Mean pairwise feature distance across an edited set."""
    if len(images) < 2:
        raise DomainError("global diversity needs at least two images")
    f = extractor(images).astype(np.float64)
    d = np.sqrt(((f[:, None, :] - f[None, :, :]) ** 2).sum(-1))
    iu = np.triu_indices(len(f), k=1)
    return float(d[iu].mean())


@dataclass
class ConsistencyReport:
    fraction_unchanged: float
    class_iou: dict[str, float]


def edit_consistency(image_before: np.ndarray, image_after: np.ndarray,
                     spec: ToySceneSpec) -> ConsistencyReport:
    """Label-stability metrics using the toy palette detector.

    fraction_unchanged: share of pixels whose detected label is identical.
    class_iou: per category, IoU of its pixel sets before vs after the edit
    (categories absent from both images are omitted).
    """
    la = spec.segment(image_before)
    lb = spec.segment(image_after)
    iou: dict[str, float] = {}
    for name, idx in CATEGORY_INDEX.items():
        a, b = la == idx, lb == idx
        union = (a | b).sum()
        if union:
            iou[name] = float((a & b).sum() / union)
    return ConsistencyReport(fraction_unchanged=float((la == lb).mean()), class_iou=iou)
