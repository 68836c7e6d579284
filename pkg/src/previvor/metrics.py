"""Evaluation metrics and reporting.

Per-image: PSNR, SSIM (canonical 11x11 Gaussian window), the
Hasler-Suesstrunk colorfulness statistic and its absolute difference.
Set-level: Frechet distance between Gaussian fits of feature embeddings,
with a pluggable extractor whose identity is recorded in every report so
numbers from different embeddings are never silently compared.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import convolve2d

from .errors import ConfigError, DimensionError, EmptyInputError
from .imagecore import RgbImage
from .nnet.layers import RandomFeaturePyramid
from .nnet.tensor import Tensor
from .prior import PriorMask

PSNR_INFINITE = math.inf

# BT.601 luma weights for the SSIM luminance plane
_LUMA = np.array([0.299, 0.587, 0.114])

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03
_SSIM_L = 255.0


def psnr(a: RgbImage, b: RgbImage) -> float:
    """10*log10(255^2 / MSE) over all channels; identical images give the
    +infinity sentinel."""
    if a.pixels.shape != b.pixels.shape:
        raise DimensionError(f"shape mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_INFINITE
    return 10.0 * math.log10(255.0**2 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(offsets**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a: RgbImage, b: RgbImage) -> float:
    """Classic SSIM on the luminance plane, mean over valid windows."""
    if a.pixels.shape != b.pixels.shape:
        raise DimensionError(f"shape mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    if a.height < _SSIM_WINDOW or a.width < _SSIM_WINDOW:
        raise DimensionError(
            f"image {a.height}x{a.width} smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window"
        )
    x = a.pixels.astype(np.float64) @ _LUMA
    y = b.pixels.astype(np.float64) @ _LUMA
    kernel = _gaussian_kernel(_SSIM_WINDOW, _SSIM_SIGMA)

    def filt(img):
        return convolve2d(img, kernel, mode="valid")

    mu_x = filt(x)
    mu_y = filt(y)
    var_x = filt(x * x) - mu_x**2
    var_y = filt(y * y) - mu_y**2
    cov = filt(x * y) - mu_x * mu_y
    c1 = (_SSIM_K1 * _SSIM_L) ** 2
    c2 = (_SSIM_K2 * _SSIM_L) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def colorfulness(img: RgbImage) -> float:
    """Hasler-Suesstrunk statistic from the rg / yb opponent channels."""
    px = img.pixels.astype(np.float64)
    rg = px[..., 0] - px[..., 1]
    yb = 0.5 * (px[..., 0] + px[..., 1]) - px[..., 2]
    sigma = math.hypot(float(rg.std()), float(yb.std()))
    mu = math.hypot(float(rg.mean()), float(yb.mean()))
    return sigma + 0.3 * mu


def delta_colorfulness(a: RgbImage, b: RgbImage) -> float:
    """Absolute colorfulness difference; a set statistic, so the two
    images may differ in size."""
    return abs(colorfulness(a) - colorfulness(b))


@dataclass(frozen=True)
class FeatureExtractorSpec:
    """Identity of the FID embedding function.

    The default is a seeded random conv pyramid over normalized RGB with
    global average pooling; feature_dim is the pooled vector length.
    """

    kind: str = "random_conv"
    seed: int = 0
    feature_dim: int = 16

    def __post_init__(self):
        if self.kind != "random_conv":
            raise ConfigError(f"unknown feature extractor kind {self.kind!r}")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")

    @property
    def spec_id(self) -> str:
        return f"{self.kind}/seed={self.seed}/dim={self.feature_dim}"

    def embed(self, images: list[RgbImage]) -> np.ndarray:
        if not images:
            raise EmptyInputError("cannot embed an empty image set")
        pyramid = _pyramid_for(self)
        rows = []
        for img in images:
            x = Tensor(img.pixels.astype(np.float64)[None] / 255.0)
            feats = pyramid(x)
            rows.append(feats[-1].values.mean(axis=(1, 2)).ravel())
        return np.stack(rows)


def _pyramid_for(spec: FeatureExtractorSpec) -> RandomFeaturePyramid:
    base = max(1, spec.feature_dim // 3)
    pyramid = RandomFeaturePyramid(3, seed=spec.seed, base=base)
    # force the last level to the exact requested width
    rng = np.random.default_rng(spec.seed + 1)
    prev = base * 2
    pyramid.weights[2] = Tensor(
        rng.normal(0.0, np.sqrt(2.0 / (prev * 9)), size=(3, 3, prev, spec.feature_dim))
    )
    return pyramid


def load_embeddings_file(path: str | Path) -> np.ndarray:
    """External embeddings: an .npz/.npy with one row per image."""
    arr = np.load(path)
    if hasattr(arr, "files"):
        arr = arr[arr.files[0]]
    return np.asarray(arr, dtype=np.float64)


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(
    mu1: np.ndarray, sigma1: np.ndarray, mu2: np.ndarray, sigma2: np.ndarray, eps: float = 1e-6
) -> float:
    """Frechet distance between N(mu1, sigma1+eps*I) and N(mu2, sigma2+eps*I).

    The cross term uses tr((A B)^1/2) = tr((B^1/2 A B^1/2)^1/2), computed
    with symmetric eigendecompositions, so the result is real and
    symmetric in its arguments up to float error.
    """
    d = mu1.shape[0]
    a = sigma1 + eps * np.eye(d)
    b = sigma2 + eps * np.eye(d)
    b_half = _sym_sqrt(b)
    inner = b_half @ a @ b_half
    cross = float(np.sum(np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None))))
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(a) + np.trace(b) - 2.0 * cross)
    return max(value, 0.0)


def fid_from_embeddings(emb_a: np.ndarray, emb_b: np.ndarray, eps: float = 1e-6) -> float:
    if emb_a.shape[0] < 2 or emb_b.shape[0] < 2:
        raise EmptyInputError("each embedding set needs at least 2 rows")
    mu_a, mu_b = emb_a.mean(axis=0), emb_b.mean(axis=0)
    sig_a = np.cov(emb_a, rowvar=False)
    sig_b = np.cov(emb_b, rowvar=False)
    return frechet_distance(mu_a, np.atleast_2d(sig_a), mu_b, np.atleast_2d(sig_b), eps=eps)


def fid(set_a: list[RgbImage], set_b: list[RgbImage], spec: FeatureExtractorSpec) -> float:
    """Frechet distance between Gaussian fits of the two embedded sets."""
    if not set_a or not set_b:
        raise EmptyInputError("FID needs two non-empty image sets")
    return fid_from_embeddings(spec.embed(set_a), spec.embed(set_b))


def apply_mask_policy(img: RgbImage, mask: PriorMask) -> RgbImage:
    """Black out pixels where the mask is 0; the same mask must be reused
    bit-exactly across every method under comparison."""
    if mask.shape != (img.height, img.width):
        raise DimensionError(f"mask shape {mask.shape} does not match image")
    out = img.pixels * mask.mask[..., None]
    return RgbImage(pixels=out)


@dataclass
class MetricReport:
    """Per-image rows plus set-level numbers, tagged with the mask policy
    and the feature extractor identity used for FID."""

    rows: list[dict] = field(default_factory=list)
    fid: float | None = None
    set_delta_colorfulness: float | None = None
    mask_policy: str = "none"
    feature_spec: str | None = None
    lpips_available: bool = False
    config_hash: str | None = None

    def summary(self) -> dict:
        out: dict = {}
        finite_psnrs = [r["psnr"] for r in self.rows if r.get("psnr") is not None]
        if finite_psnrs:
            capped = [p for p in finite_psnrs if math.isfinite(p)]
            out["mean_psnr"] = float(np.mean(capped)) if capped else PSNR_INFINITE
        if self.rows and "ssim" in self.rows[0]:
            out["mean_ssim"] = float(np.mean([r["ssim"] for r in self.rows]))
        if self.rows and "delta_colorfulness" in self.rows[0]:
            out["mean_delta_colorfulness"] = float(
                np.mean([r["delta_colorfulness"] for r in self.rows])
            )
        if self.fid is not None:
            out["fid"] = self.fid
        if self.set_delta_colorfulness is not None:
            out["set_delta_colorfulness"] = self.set_delta_colorfulness
        return out

    def assert_comparable(self, other: "MetricReport") -> None:
        """FID numbers from different extractors must never be compared."""
        if self.fid is not None and other.fid is not None:
            if self.feature_spec != other.feature_spec:
                raise ConfigError(
                    "FID values are incomparable: feature specs "
                    f"{self.feature_spec!r} vs {other.feature_spec!r}"
                )

    def to_json(self) -> str:
        def encode(v):
            if isinstance(v, float) and math.isinf(v):
                return "inf"
            return v

        payload = {
            "mask_policy": self.mask_policy,
            "feature_spec": self.feature_spec,
            "lpips": "unavailable" if not self.lpips_available else "available",
            "config_hash": self.config_hash,
            "rows": [{k: encode(v) for k, v in r.items()} for r in self.rows],
            "summary": {k: encode(v) for k, v in self.summary().items()},
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Aligned-column text table: one row per image plus a summary."""
        if not self.rows:
            cols = []
        else:
            cols = [k for k in self.rows[0] if k != "name"]
        header = ["name"] + cols
        lines = [header]
        for r in self.rows:
            lines.append(
                [str(r.get("name", "?"))]
                + [_fmt(r.get(c)) for c in cols]
            )
        summary = self.summary()
        if summary:
            lines.append([""])
            for k, v in summary.items():
                lines.append([k, _fmt(v)])
        ncols = max(len(row) for row in lines)
        widths = [max(len(row[i]) if i < len(row) else 0 for row in lines) for i in range(ncols)]
        rendered = []
        for row in lines:
            rendered.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        return "\n".join(rendered) + "\n"

    def save(self, json_path: str | Path, table_path: str | Path | None = None) -> None:
        Path(json_path).write_text(self.to_json())
        if table_path is not None:
            Path(table_path).write_text(self.to_table())


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return "inf" if math.isinf(v) else f"{v:.4f}"
    return str(v)


def evaluate_paired(
    pred: list[tuple[str, RgbImage]],
    ref: list[tuple[str, RgbImage]],
    mask_for: dict[str, PriorMask] | None = None,
    feature_spec: FeatureExtractorSpec | None = None,
) -> MetricReport:
    """Per-image metrics over aligned (name, image) lists.

    When masks are supplied, the identical mask is applied to both the
    prediction and the reference before any metric (the masked protocol).
    """
    if len(pred) != len(ref):
        raise DimensionError(f"paired evaluation needs equal set sizes, got {len(pred)} vs {len(ref)}")
    if not pred:
        raise EmptyInputError("empty evaluation set")
    report = MetricReport(
        mask_policy="prior_mask" if mask_for else "none",
        feature_spec=feature_spec.spec_id if feature_spec else None,
    )
    masked_pred, masked_ref = [], []
    for (name_p, img_p), (name_r, img_r) in zip(pred, ref):
        if name_p != name_r:
            raise ConfigError(f"pair misalignment: {name_p!r} vs {name_r!r}")
        if mask_for is not None:
            mask = mask_for[name_p]
            img_p = apply_mask_policy(img_p, mask)
            img_r = apply_mask_policy(img_r, mask)
        masked_pred.append(img_p)
        masked_ref.append(img_r)
        report.rows.append(
            {
                "name": name_p,
                "psnr": psnr(img_p, img_r),
                "ssim": ssim(img_p, img_r),
                "colorfulness": colorfulness(img_p),
                "delta_colorfulness": delta_colorfulness(img_p, img_r),
            }
        )
    if feature_spec is not None and len(pred) >= 2:
        report.fid = fid(masked_pred, masked_ref, feature_spec)
    return report


def evaluate_unpaired(
    pred: list[RgbImage],
    ref: list[RgbImage],
    feature_spec: FeatureExtractorSpec,
    masks_pred: list[PriorMask] | None = None,
    masks_ref: list[PriorMask] | None = None,
) -> MetricReport:
    """Set-level evaluation: FID plus the difference of mean colorfulness."""
    if not pred or not ref:
        raise EmptyInputError("empty evaluation set")
    if masks_pred is not None:
        pred = [apply_mask_policy(i, m) for i, m in zip(pred, masks_pred)]
    if masks_ref is not None:
        ref = [apply_mask_policy(i, m) for i, m in zip(ref, masks_ref)]
    report = MetricReport(
        mask_policy="prior_mask" if masks_pred is not None else "none",
        feature_spec=feature_spec.spec_id,
    )
    report.fid = fid(pred, ref, feature_spec)
    mean_pred = float(np.mean([colorfulness(i) for i in pred]))
    mean_ref = float(np.mean([colorfulness(i) for i in ref]))
    report.set_delta_colorfulness = abs(mean_pred - mean_ref)
    return report
