"""Residual color-prior extraction.

Four steps: isolate the silk background, filter gradient-smooth candidate
pixels inside a plausible silk chroma box, estimate the representative
silk color with seeded K-means, then keep every pixel whose ab distance
to that color exceeds tau as a valid color prior.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DimensionError, SilkEstimationError
from .imagecore import ChromaPlanes, LabImage

DEFAULT_TAU = 20.0
DEFAULT_SILK_BOX = (-5.0, 25.0, 0.0, 40.0)  # a_min, a_max, b_min, b_max: beige/tan chroma
DEFAULT_K = 3
DEFAULT_GRADIENT_THRESHOLD = 2.0


@dataclass(frozen=True)
class PriorConfig:
    """Knobs of the prior-extraction pipeline."""

    tau: float = DEFAULT_TAU
    k: int = DEFAULT_K
    gradient_threshold: float = DEFAULT_GRADIENT_THRESHOLD
    silk_box: tuple[float, float, float, float] = DEFAULT_SILK_BOX
    kmeans_max_iters: int = 50
    kmeans_seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.gradient_threshold < 0:
            raise ConfigError("gradient_threshold must be non-negative")
        a_min, a_max, b_min, b_max = self.silk_box
        if a_min >= a_max or b_min >= b_max:
            raise ConfigError("silk_box must be a non-empty (a, b) rectangle")
        if self.kmeans_max_iters < 1:
            raise ConfigError("kmeans_max_iters must be >= 1")


@dataclass(frozen=True)
class PriorMask:
    """Binary H x W validity mask; 1 marks trustworthy residual color."""

    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2:
            raise DimensionError(f"expected HxW mask, got shape {m.shape}")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("mask values must be 0 or 1")
        m = m.astype(np.uint8)
        m.flags.writeable = False
        object.__setattr__(self, "mask", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    def save(self, path: str | Path) -> None:
        """Write as a 1-bit PNG."""
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(self.mask * 255).convert("1").save(path, format="PNG")

    @classmethod
    def load(cls, path: str | Path) -> "PriorMask":
        with Image.open(path) as im:
            return cls(mask=(np.asarray(im.convert("1")) > 0).astype(np.uint8))


@dataclass(frozen=True)
class SilkEstimate:
    """Representative silk chroma and how dominant its cluster was."""

    c_silk: tuple[float, float]
    support_fraction: float

    def __post_init__(self):
        a, b = self.c_silk
        if not (-128.0 <= a <= 127.0 and -128.0 <= b <= 127.0):
            raise ValueError(f"c_silk {self.c_silk} outside the ab range")
        if not (0.0 <= self.support_fraction <= 1.0):
            raise ValueError("support_fraction must lie in [0, 1]")
        object.__setattr__(self, "c_silk", (float(a), float(b)))

    def to_json(self) -> str:
        return json.dumps(
            {"a": self.c_silk[0], "b": self.c_silk[1], "support_fraction": self.support_fraction},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "SilkEstimate":
        d = json.loads(text)
        return cls(c_silk=(d["a"], d["b"]), support_fraction=d["support_fraction"])


def _inside_silk_box(a: np.ndarray, b: np.ndarray, box) -> np.ndarray:
    a_min, a_max, b_min, b_max = box
    return (a >= a_min) & (a <= a_max) & (b >= b_min) & (b <= b_max)


def chroma_gradient_magnitude(img: LabImage) -> np.ndarray:
    """Forward-difference ab gradient: L2 norm over the four partials.

    Differences at the last row/column are zero (edge replication), so a
    uniform image has zero gradient everywhere.
    """
    grads = []
    for plane in (img.a, img.b):
        dy = np.zeros_like(plane)
        dx = np.zeros_like(plane)
        dy[:-1, :] = plane[1:, :] - plane[:-1, :]
        dx[:, :-1] = plane[:, 1:] - plane[:, :-1]
        grads.extend((dy, dx))
    return np.sqrt(sum(g * g for g in grads))


def background_mask(
    img: LabImage, cfg: PriorConfig, external: PriorMask | None = None
) -> PriorMask:
    """Isolate the background region.

    An externally supplied mask (e.g. from a segmentation model) is
    returned verbatim; otherwise the silk-box chroma heuristic stands in.
    """
    if external is not None:
        if external.shape != img.shape:
            raise DimensionError(
                f"external mask shape {external.shape} does not match image {img.shape}"
            )
        return external
    inside = _inside_silk_box(img.a, img.b, cfg.silk_box)
    return PriorMask(mask=inside.astype(np.uint8))


def filter_silk_candidates(
    img: LabImage, bg: PriorMask, cfg: PriorConfig
) -> set[tuple[int, int]]:
    """Background pixels that are silk-colored and gradient-smooth."""
    if bg.shape != img.shape:
        raise DimensionError(f"mask shape {bg.shape} does not match image {img.shape}")
    inside = _inside_silk_box(img.a, img.b, cfg.silk_box)
    smooth = chroma_gradient_magnitude(img) <= cfg.gradient_threshold
    keep = (bg.mask == 1) & inside & smooth
    rows, cols = np.nonzero(keep)
    return {(int(r), int(c)) for r, c in zip(rows, cols)}


def _kmeans_seeded(points: np.ndarray, k: int, max_iters: int, seed: int):
    """Plain Lloyd iterations with farthest-point (k-means++-style) init.

    The first center is drawn by the seeded rng; each next center is the
    point farthest from all existing centers. Fully deterministic.
    """
    n = points.shape[0]
    k = min(k, n)
    rng = np.random.default_rng(seed)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    if k > 1:
        d2 = np.sum((points - centers[0]) ** 2, axis=1)
        for i in range(1, k):
            centers[i] = points[int(np.argmax(d2))]
            d2 = np.minimum(d2, np.sum((points - centers[i]) ** 2, axis=1))
    assign = None
    for _ in range(max_iters):
        dists = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(dists, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            sel = assign == c
            if sel.any():
                centers[c] = points[sel].mean(axis=0)
    return centers, assign, k


def estimate_silk_color(
    img: LabImage, candidates: set[tuple[int, int]], cfg: PriorConfig
) -> SilkEstimate:
    """Cluster candidate chroma with K-means; the largest cluster wins.

    Size ties prefer the cluster with lower mean intra-cluster gradient,
    then the centroid closest to the ab origin.
    """
    if not candidates:
        raise SilkEstimationError("no silk candidates to cluster")
    coords = np.array(sorted(candidates), dtype=np.int64)
    points = np.stack(
        [img.a[coords[:, 0], coords[:, 1]], img.b[coords[:, 0], coords[:, 1]]], axis=1
    )
    centers, assign, k = _kmeans_seeded(points, cfg.k, cfg.kmeans_max_iters, cfg.kmeans_seed)
    sizes = np.bincount(assign, minlength=k)
    grad = chroma_gradient_magnitude(img)[coords[:, 0], coords[:, 1]]

    best, best_key = None, None
    for c in range(k):
        if sizes[c] == 0:
            continue
        mean_grad = float(grad[assign == c].mean())
        key = (-int(sizes[c]), mean_grad, float(np.hypot(*centers[c])))
        if best_key is None or key < best_key:
            best, best_key = c, key
    centroid = points[assign == best].mean(axis=0)
    return SilkEstimate(
        c_silk=(float(centroid[0]), float(centroid[1])),
        support_fraction=float(sizes[best] / len(candidates)),
    )


def compute_prior_mask(img: LabImage, c_silk: tuple[float, float], tau: float) -> PriorMask:
    """mask(i,j) = 1 iff ||ab(i,j) - c_silk||_2 > tau (strict)."""
    dist = np.hypot(img.a - c_silk[0], img.b - c_silk[1])
    return PriorMask(mask=(dist > tau).astype(np.uint8))


def extract_prior(img: LabImage, mask: PriorMask) -> ChromaPlanes:
    """Keep chroma only where the mask is set; zeros elsewhere."""
    if mask.shape != img.shape:
        raise DimensionError(f"mask shape {mask.shape} does not match image {img.shape}")
    m = mask.mask.astype(np.float64)
    return ChromaPlanes(a=img.a * m, b=img.b * m)


@dataclass(frozen=True)
class PriorResult:
    """Output of the composed prior pipeline on one image."""

    mask: PriorMask
    silk: SilkEstimate
    chroma_prior: ChromaPlanes
    silk_found: bool  # False when the (0, 0) fallback was used


def extract_color_prior(
    img: LabImage, cfg: PriorConfig, external_bg: PriorMask | None = None
) -> PriorResult:
    """Run the full four-step extraction on one image.

    When no silk candidates survive filtering, falls back to a tau-mask
    around c_silk = (0, 0) and flags the result.
    """
    bg = background_mask(img, cfg, external_bg)
    candidates = filter_silk_candidates(img, bg, cfg)
    try:
        silk = estimate_silk_color(img, candidates, cfg)
        found = True
    except SilkEstimationError:
        silk = SilkEstimate(c_silk=(0.0, 0.0), support_fraction=0.0)
        found = False
    mask = compute_prior_mask(img, silk.c_silk, cfg.tau)
    return PriorResult(
        mask=mask, silk=silk, chroma_prior=extract_prior(img, mask), silk_found=found
    )
