"""Image plane types and CIELAB color math shared by every pipeline stage.

All float planes are double precision; 8-bit quantization happens only at
PNG I/O. Conversions use the IEC 61966-2-1 sRGB companding curve and the
D65 white point, so the full conversion chain is sRGB -> linear RGB ->
XYZ(D65) -> CIELAB and back.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionError

# sRGB (linear) -> XYZ, D65, IEC 61966-2-1. The white point is taken as the
# row sums so that R=G=B maps to a=b=0 exactly.
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_SRGB = np.linalg.inv(_SRGB_TO_XYZ)
_WHITE_D65 = _SRGB_TO_XYZ.sum(axis=1)

# CIE f() switch point: (6/29)^3
_LAB_EPS = 216.0 / 24389.0
_LAB_DELTA = 6.0 / 29.0


class DomainTag(enum.Enum):
    """Which luminance domain a plane belongs to."""

    REAL_DEGRADED = "real_degraded"
    SYNTHETIC_DEGRADED = "synthetic_degraded"
    NON_DEGRADED = "non_degraded"
    RESTORED = "restored"


def _frozen(arr: np.ndarray, dtype) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB image, H x W x 3, samples in [0, 255]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise DimensionError(f"expected HxWx3 pixel array, got shape {px.shape}")
        if px.min() < 0 or px.max() > 255:
            raise ValueError("RGB samples must lie in [0, 255]")
        object.__setattr__(self, "pixels", _frozen(px, np.uint8))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class LabImage:
    """CIELAB image as three aligned float planes.

    L in [0, 100]; a and b in [-128, 127].
    """

    L: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.L, dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if not (L.shape == a.shape == b.shape) or L.ndim != 2:
            raise DimensionError(
                f"L/a/b planes must share an HxW shape, got {L.shape}, {a.shape}, {b.shape}"
            )
        if L.min() < 0.0 or L.max() > 100.0:
            raise ValueError("L plane must lie in [0, 100]")
        for name, plane in (("a", a), ("b", b)):
            if plane.min() < -128.0 or plane.max() > 127.0:
                raise ValueError(f"{name} plane must lie in [-128, 127]")
        object.__setattr__(self, "L", _frozen(L, np.float64))
        object.__setattr__(self, "a", _frozen(a, np.float64))
        object.__setattr__(self, "b", _frozen(b, np.float64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.L.shape

    def chroma(self) -> "ChromaPlanes":
        return ChromaPlanes(a=self.a, b=self.b)


@dataclass(frozen=True)
class LuminancePlane:
    """Luminance on the 8-bit scale [0, 255] with a fixed domain tag."""

    values: np.ndarray
    domain_tag: DomainTag

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DimensionError(f"expected HxW luminance plane, got shape {v.shape}")
        if v.min() < 0.0 or v.max() > 255.0:
            raise ValueError("luminance values must lie in [0, 255]")
        if not isinstance(self.domain_tag, DomainTag):
            raise ValueError(f"domain_tag must be a DomainTag, got {self.domain_tag!r}")
        object.__setattr__(self, "values", _frozen(v, np.float64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class ChromaPlanes:
    """Aligned a/b chroma planes in [-128, 127]."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        if a.shape != b.shape or a.ndim != 2:
            raise DimensionError(f"a/b planes must share an HxW shape, got {a.shape}, {b.shape}")
        for name, plane in (("a", a), ("b", b)):
            if plane.min() < -128.0 or plane.max() > 127.0:
                raise ValueError(f"{name} plane must lie in [-128, 127]")
        object.__setattr__(self, "a", _frozen(a, np.float64))
        object.__setattr__(self, "b", _frozen(b, np.float64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape


def _axis_origins(dim: int, patch: int, stride: int) -> list[int]:
    # Final origin snaps to the image edge when the stride does not tile
    # exactly, so no pixels are dropped (overlap allowed).
    origins = list(range(0, dim - patch + 1, stride))
    if origins[-1] != dim - patch:
        origins.append(dim - patch)
    return origins


@dataclass(frozen=True)
class PatchGrid:
    """Square patch layout over an image: size, stride, and origin list."""

    patch_size: int
    stride: int
    origins: tuple[tuple[int, int], ...] = field(default=())

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")
        if self.stride < 1:
            raise ValueError("stride must be positive")
        if self.stride > self.patch_size:
            raise ValueError("stride must not exceed patch_size")
        object.__setattr__(self, "origins", tuple((int(r), int(c)) for r, c in self.origins))

    @classmethod
    def for_image(cls, height: int, width: int, patch_size: int, stride: int) -> "PatchGrid":
        """Build the row-major edge-snapped grid covering an HxW image."""
        if patch_size > height or patch_size > width:
            raise DimensionError(
                f"patch_size {patch_size} exceeds image dimensions {height}x{width}"
            )
        rows = _axis_origins(height, patch_size, stride)
        cols = _axis_origins(width, patch_size, stride)
        origins = tuple((r, c) for r in rows for c in cols)
        return cls(patch_size=patch_size, stride=stride, origins=origins)


def rgb_to_lab(img: RgbImage) -> LabImage:
    """Convert an 8-bit sRGB image to CIELAB (D65).

    Pure per-pixel map; white maps to L=100, a=b=0 and black to the origin.
    """
    srgb = img.pixels.astype(np.float64) / 255.0
    lin = np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _SRGB_TO_XYZ.T
    t = xyz / _WHITE_D65
    f = np.where(t > _LAB_EPS, np.cbrt(t), t / (3.0 * _LAB_DELTA**2) + 4.0 / 29.0)
    fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
    L = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    # Guard float noise at the gamut corners; stays well under 1e-10.
    return LabImage(L=np.clip(L, 0.0, 100.0), a=np.clip(a, -128.0, 127.0), b=np.clip(b, -128.0, 127.0))


def lab_to_rgb(img: LabImage) -> RgbImage:
    """Convert CIELAB back to 8-bit sRGB, clamping out-of-gamut values."""
    fy = (img.L + 16.0) / 116.0
    fx = fy + img.a / 500.0
    fz = fy - img.b / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    t = np.where(f > _LAB_DELTA, f**3, 3.0 * _LAB_DELTA**2 * (f - 4.0 / 29.0))
    xyz = t * _WHITE_D65
    lin = xyz @ _XYZ_TO_SRGB.T
    # Negative linear values fall through the linear branch and are clipped
    # below, which keeps the power() domain valid.
    srgb = np.where(
        lin <= 0.0031308,
        lin * 12.92,
        1.055 * np.power(np.maximum(lin, 1e-300), 1.0 / 2.4) - 0.055,
    )
    pixels = np.clip(np.round(srgb * 255.0), 0.0, 255.0).astype(np.uint8)
    return RgbImage(pixels=pixels)


def luminance_8bit(img: LabImage, tag: DomainTag) -> LuminancePlane:
    """Rescale Lab L in [0, 100] to the 8-bit range [0, 255]."""
    return LuminancePlane(values=img.L * 255.0 / 100.0, domain_tag=tag)


def luminance_to_lab_l(plane: LuminancePlane) -> np.ndarray:
    """Inverse of :func:`luminance_8bit`: back to the Lab L scale [0, 100]."""
    return plane.values * 100.0 / 255.0


def extract_patches(img: LabImage, grid: PatchGrid) -> list[LabImage]:
    """Cut square patches out of an image in row-major origin order.

    Pure windowing: no resampling, each patch is a view-copy of the source.
    """
    h, w = img.shape
    p = grid.patch_size
    patches = []
    for r, c in grid.origins:
        if r < 0 or c < 0 or r + p > h or c + p > w:
            raise DimensionError(f"patch origin ({r}, {c}) with size {p} exceeds image {h}x{w}")
        patches.append(
            LabImage(
                L=img.L[r : r + p, c : c + p],
                a=img.a[r : r + p, c : c + p],
                b=img.b[r : r + p, c : c + p],
            )
        )
    return patches


def load_png(path: str | Path) -> RgbImage:
    """Read an 8-bit RGB PNG from disk."""
    with Image.open(path) as im:
        return RgbImage(pixels=np.asarray(im.convert("RGB")))


def save_png(img: RgbImage, path: str | Path) -> None:
    """Write an 8-bit RGB PNG; the only image format the pipeline emits."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")
