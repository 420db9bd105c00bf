"""Procedural toy scenes: gradient backgrounds plus colored furniture shapes.

The desk-scale stand-in for a real scene dataset. Every sample carries exact
per-object masks, and a palette-based detector segments *rendered* images the
way a segmentation network would at paper scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class ToyCategory:
    name: str
    color: tuple[float, float, float]       # base fill, RGB in [0, 1]
    shape: str                              # "rect" | "ellipse"
    x_range: tuple[float, float]            # center prior, normalized
    y_range: tuple[float, float]
    w_range: tuple[float, float]            # extent prior, normalized
    h_range: tuple[float, float]


# location priors mimic indoor layout statistics: beds low-center, windows high
CATEGORIES: tuple[ToyCategory, ...] = (
    ToyCategory("bed", (0.80, 0.22, 0.28), "rect",
                (0.30, 0.70), (0.62, 0.80), (0.38, 0.58), (0.20, 0.32)),
    ToyCategory("window", (0.25, 0.55, 0.95), "rect",
                (0.20, 0.80), (0.15, 0.30), (0.18, 0.30), (0.16, 0.26)),
    ToyCategory("table", (0.62, 0.33, 0.02), "rect",
                (0.15, 0.85), (0.45, 0.58), (0.14, 0.24), (0.12, 0.20)),
    ToyCategory("lamp", (0.95, 0.82, 0.20), "ellipse",
                (0.10, 0.90), (0.22, 0.42), (0.12, 0.20), (0.12, 0.20)),
)

CATEGORY_INDEX = {c.name: i + 1 for i, c in enumerate(CATEGORIES)}  # 0 = background


@dataclass
class ToySample:
    image: np.ndarray                      # [3, H, W] float32 in [-1, 1]
    masks: dict[str, np.ndarray]           # category name -> [H, W] bool (visible pixels)
    labels: np.ndarray                     # [H, W] int, 0 = background


@dataclass
class ToySceneSpec:
    canvas: int = 32
    min_objects: int = 2
    max_objects: int = 4
    color_jitter: float = 0.05
    # backgrounds stay dim and gray so the palette detector separates objects
    bg_low: tuple[float, float, float] = (0.12, 0.14, 0.16)
    bg_high: tuple[float, float, float] = (0.42, 0.44, 0.48)
    detector_threshold: float = 0.28
    categories: tuple[ToyCategory, ...] = field(default=CATEGORIES)

    def sample(self, rng: np.random.Generator) -> ToySample:
        h = w = self.canvas
        top = np.array([rng.uniform(lo, hi) for lo, hi in zip(self.bg_low, self.bg_high)])
        bot = np.array([rng.uniform(lo, hi) for lo, hi in zip(self.bg_low, self.bg_high)])
        ramp = np.linspace(0.0, 1.0, h)[:, None]
        img = (top[:, None, None] * (1 - ramp) + bot[:, None, None] * ramp)
        img = np.broadcast_to(img, (3, h, w)).copy()

        n = int(rng.integers(self.min_objects, self.max_objects + 1))
        picks = rng.choice(len(self.categories), size=n, replace=False)
        labels = np.zeros((h, w), dtype=np.int64)
        masks: dict[str, np.ndarray] = {}
        # paint in category order so depth is deterministic (later = on top)
        for ci in sorted(picks):
            cat = self.categories[ci]
            mask = self._object_mask(cat, rng, h, w)
            color = np.clip(np.asarray(cat.color) +
                            rng.uniform(-self.color_jitter, self.color_jitter, 3), 0, 1)
            img[:, mask] = color[:, None]
            labels[mask] = CATEGORY_INDEX[cat.name]
        for name, idx in CATEGORY_INDEX.items():
            visible = labels == idx
            if visible.any():
                masks[name] = visible
        return ToySample(image=(img * 2.0 - 1.0).astype(np.float32),
                         masks=masks, labels=labels)

    def _object_mask(self, cat: ToyCategory, rng: np.random.Generator,
                     h: int, w: int) -> np.ndarray:
        cx = rng.uniform(*cat.x_range)
        cy = rng.uniform(*cat.y_range)
        ow = rng.uniform(*cat.w_range)
        oh = rng.uniform(*cat.h_range)
        ys = (np.arange(h) + 0.5) / h
        xs = (np.arange(w) + 0.5) / w
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        if cat.shape == "rect":
            return ((np.abs(gx - cx) <= ow / 2) & (np.abs(gy - cy) <= oh / 2))
        if cat.shape == "ellipse":
            return (((gx - cx) / (ow / 2)) ** 2 + ((gy - cy) / (oh / 2)) ** 2) <= 1.0
        raise DomainError(f"unknown toy shape {cat.shape!r}")

    def sample_batch(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, list[ToySample]]:
        samples = [self.sample(rng) for _ in range(n)]
        return np.stack([s.image for s in samples]), samples

    # -- palette detector (stand-in for a segmentation network) ---------------
    def segment(self, image: np.ndarray) -> np.ndarray:
        """Label rendered pixels by nearest category color within a threshold.

        image: [3, H, W] in [-1, 1]. Returns [H, W] int labels, 0 = background.
        """
        rgb = (np.asarray(image, dtype=np.float32) + 1.0) / 2.0
        h, w = rgb.shape[1:]
        dists = np.stack([
            np.linalg.norm(rgb - np.asarray(c.color, dtype=np.float32)[:, None, None], axis=0)
            for c in self.categories])
        best = dists.argmin(axis=0)
        labels = np.where(dists.min(axis=0) <= self.detector_threshold, best + 1, 0)
        return labels.astype(np.int64)

    def detect_masks(self, image: np.ndarray) -> dict[str, np.ndarray]:
        labels = self.segment(image)
        out = {}
        for name, idx in CATEGORY_INDEX.items():
            m = labels == idx
            if m.any():
                out[name] = m
        return out
