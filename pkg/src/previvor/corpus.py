"""Synthetic corpus generation and manifest-based dataset ingestion.

The generator paints a smooth silk-colored background with a few vivid
opaque shapes (ellipses, rectangles, strokes), standing in for the
unavailable museum collection. Degraded counterparts get the same
luminance and chroma fading the training stages simulate.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import degrade
from .errors import ManifestError
from .imagecore import (
    DomainTag,
    LabImage,
    LuminancePlane,
    lab_to_rgb,
    load_png,
    luminance_8bit,
    rgb_to_lab,
    save_png,
)

ROLES = ("real_degraded", "non_degraded", "paired_degraded", "paired_restored")
# roles that may stand on the clean side of a (degraded, clean) pair
CLEAN_PAIR_ROLES = ("paired_restored", "non_degraded")

# vivid mineral-pigment chroma, all well outside the default silk box
DEFAULT_PALETTE = (
    (45.0, 62.0, 48.0),   # vermilion
    (40.0, 55.0, 25.0),   # crimson
    (55.0, -52.0, 38.0),  # malachite
    (38.0, 12.0, -52.0),  # azurite
    (78.0, 4.0, 72.0),    # gamboge
    (25.0, -3.0, -9.0),   # ink
)


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 64
    silk_center: tuple[float, float] = (10.0, 20.0)
    silk_jitter: float = 3.0
    silk_l_center: float = 72.0
    silk_l_jitter: float = 6.0
    shape_count_range: tuple[int, int] = (3, 8)
    palette: tuple[tuple[float, float, float], ...] = DEFAULT_PALETTE
    texture_noise: float = 0.6

    def __post_init__(self):
        if not self.palette:
            raise ManifestError("palette must be non-empty")
        if self.image_size < 8:
            raise ManifestError("image_size must be at least 8")


def _smooth_field(rng: np.random.Generator, h: int, w: int, grid: int, amp: float) -> np.ndarray:
    """Low-frequency noise: a coarse grid bilinearly upsampled."""
    coarse = rng.uniform(-amp, amp, size=(grid, grid))
    yi = np.linspace(0.0, grid - 1.0, h)
    xi = np.linspace(0.0, grid - 1.0, w)
    y0 = np.minimum(yi.astype(int), grid - 2)
    x0 = np.minimum(xi.astype(int), grid - 2)
    fy = (yi - y0)[:, None]
    fx = (xi - x0)[None, :]
    tl = coarse[np.ix_(y0, x0)]
    tr = coarse[np.ix_(y0, x0 + 1)]
    bl = coarse[np.ix_(y0 + 1, x0)]
    br = coarse[np.ix_(y0 + 1, x0 + 1)]
    return tl * (1 - fy) * (1 - fx) + tr * (1 - fy) * fx + bl * fy * (1 - fx) + br * fy * fx


def _shape_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    kind = rng.integers(3)
    if kind == 0:  # ellipse
        cy, cx = rng.uniform(0.15, 0.85, 2) * size
        ry, rx = rng.uniform(0.08, 0.22, 2) * size
        return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    if kind == 1:  # rectangle
        cy, cx = rng.uniform(0.15, 0.85, 2) * size
        hy, hx = rng.uniform(0.07, 0.18, 2) * size
        return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
    # stroke: distance to a random segment
    p0 = rng.uniform(0.1, 0.9, 2) * size
    p1 = rng.uniform(0.1, 0.9, 2) * size
    width = rng.uniform(0.025, 0.06) * size
    d = p1 - p0
    denom = float(d @ d) or 1.0
    t = np.clip(((yy - p0[0]) * d[0] + (xx - p0[1]) * d[1]) / denom, 0.0, 1.0)
    dist = np.hypot(yy - (p0[0] + t * d[0]), xx - (p0[1] + t * d[1]))
    return dist <= width


def generate_synthetic_painting(cfg: SynthConfig, rng: np.random.Generator) -> LabImage:
    """One painting: silk field plus vivid shapes, deterministic per rng."""
    n = cfg.image_size
    silk_a = cfg.silk_center[0] + rng.uniform(-cfg.silk_jitter, cfg.silk_jitter)
    silk_b = cfg.silk_center[1] + rng.uniform(-cfg.silk_jitter, cfg.silk_jitter)
    silk_l = cfg.silk_l_center + rng.uniform(-cfg.silk_l_jitter, cfg.silk_l_jitter)

    L = np.full((n, n), silk_l) + _smooth_field(rng, n, n, 5, cfg.texture_noise * 2.0)
    L += rng.uniform(-cfg.texture_noise, cfg.texture_noise, size=(n, n))
    a = np.full((n, n), silk_a) + _smooth_field(rng, n, n, 5, cfg.texture_noise)
    b = np.full((n, n), silk_b) + _smooth_field(rng, n, n, 5, cfg.texture_noise)

    lo, hi = cfg.shape_count_range
    for _ in range(int(rng.integers(lo, hi + 1))):
        mask = _shape_mask(rng, n)
        color = cfg.palette[int(rng.integers(len(cfg.palette)))]
        l_jit = rng.uniform(-4.0, 4.0)
        L[mask] = color[0] + l_jit
        a[mask] = color[1]
        b[mask] = color[2]

    return LabImage(
        L=np.clip(L, 0.0, 100.0), a=np.clip(a, -128.0, 127.0), b=np.clip(b, -128.0, 127.0)
    )


def synthesize_pair(
    synth_cfg: SynthConfig,
    degrade_cfg: degrade.DegradationSamplerConfig,
    rng: np.random.Generator,
) -> tuple[LabImage, LabImage, degrade.DegradationChoice, degrade.AttenuationParams]:
    """A (non-degraded, degraded) painting pair plus the degradation record."""
    painting = generate_synthetic_painting(synth_cfg, rng)
    lum = luminance_8bit(painting, DomainTag.NON_DEGRADED)
    degraded_lum, choice = degrade.sample_degradation(lum, degrade_cfg, rng)
    atten = degrade.sample_attenuation_params(rng)
    faded = degrade.attenuate_chroma(painting.chroma(), atten)
    degraded = LabImage(L=degraded_lum.values * 100.0 / 255.0, a=faded.a, b=faded.b)
    return painting, degraded, choice, atten


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    role: str
    pair_id: str | None = None
    split: str = "train"

    def __post_init__(self):
        if self.role not in ROLES:
            raise ManifestError(f"unknown role {self.role!r}")
        if self.split not in ("train", "heldout"):
            raise ManifestError(f"unknown split {self.split!r}")


@dataclass
class CorpusManifest:
    root: Path
    entries: list[ManifestEntry] = field(default_factory=list)

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def by_role(self, *roles: str, split: str | None = None) -> list[ManifestEntry]:
        return [
            e
            for e in self.entries
            if e.role in roles and (split is None or e.split == split)
        ]

    def pairs(self, split: str | None = None) -> list[tuple[ManifestEntry, ManifestEntry]]:
        """(degraded, clean) entry pairs sharing a pair_id."""
        grouped: dict[str, list[ManifestEntry]] = {}
        for e in self.entries:
            if e.pair_id is not None:
                grouped.setdefault(e.pair_id, []).append(e)
        out = []
        for pid in sorted(grouped):
            members = grouped[pid]
            degraded = [e for e in members if e.role in ("paired_degraded", "real_degraded")]
            clean = [e for e in members if e.role in CLEAN_PAIR_ROLES]
            if len(degraded) == 1 and len(clean) == 1:
                if split is None or (degraded[0].split == split):
                    out.append((degraded[0], clean[0]))
        return out

    def save(self, path: str | Path | None = None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.jsonl"
        lines = []
        for e in self.entries:
            record = {"path": e.path, "role": e.role, "split": e.split}
            if e.pair_id is not None:
                record["pair_id"] = e.pair_id
            lines.append(json.dumps(record, sort_keys=True))
        path.write_text("\n".join(lines) + "\n")
        return path


def load_manifest(path: str | Path) -> CorpusManifest:
    """Parse and eagerly validate a JSON-lines manifest.

    Distinct failures: missing file, malformed entry (with line number),
    orphaned or inconsistent pair_id, and pairs with mismatched image
    dimensions.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    entries: list[ManifestEntry] = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            entry = ManifestEntry(
                path=record["path"],
                role=record["role"],
                pair_id=record.get("pair_id"),
                split=record.get("split", "train"),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ManifestError) as exc:
            raise ManifestError(f"{path}:{lineno}: malformed entry: {exc}") from exc
        if not (root / entry.path).exists():
            raise ManifestError(f"{path}:{lineno}: file not found: {entry.path}")
        entries.append(entry)

    manifest = CorpusManifest(root=root, entries=entries)
    _validate_pairs(manifest)
    return manifest


def _validate_pairs(manifest: CorpusManifest) -> None:
    grouped: dict[str, list[ManifestEntry]] = {}
    for e in manifest.entries:
        if e.pair_id is not None:
            grouped.setdefault(e.pair_id, []).append(e)
    for pid, members in grouped.items():
        if len(members) != 2:
            raise ManifestError(f"pair_id {pid!r} has {len(members)} entries, expected 2")
        roles = sorted(e.role for e in members)
        degraded = [e for e in members if e.role in ("paired_degraded", "real_degraded")]
        clean = [e for e in members if e.role in CLEAN_PAIR_ROLES]
        if len(degraded) != 1 or len(clean) != 1:
            raise ManifestError(f"pair_id {pid!r} roles {roles} are not a degraded/clean pair")
        sizes = []
        for e in members:
            with Image.open(manifest.resolve(e)) as im:
                sizes.append(im.size)
        if sizes[0] != sizes[1]:
            raise ManifestError(f"pair_id {pid!r} dimensions differ: {sizes[0]} vs {sizes[1]}")


def _split_for(png_bytes: bytes, seed: int, heldout_fraction: float) -> str:
    digest = hashlib.sha256(png_bytes + str(seed).encode()).digest()
    bucket = int.from_bytes(digest[:4], "big") / 2**32
    return "heldout" if bucket < heldout_fraction else "train"


def build_training_corpus(
    synth_cfg: SynthConfig,
    n_images: int,
    degrade_cfg: degrade.DegradationSamplerConfig,
    out_dir: str | Path,
    seed: int = 0,
    heldout_fraction: float = 0.1,
) -> CorpusManifest:
    """Emit n paintings plus degraded counterparts and a manifest.

    Layout: {root}/{split}/{role}/{pair_id}.png. Splits come from a
    deterministic hash of the clean image bytes and the seed.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    entries: list[ManifestEntry] = []
    for i in range(n_images):
        rng = np.random.default_rng([seed, i])
        painting, degraded, _, _ = synthesize_pair(synth_cfg, degrade_cfg, rng)
        pair_id = f"{i:05d}"

        clean_rgb = lab_to_rgb(painting)
        buf = io.BytesIO()
        Image.fromarray(clean_rgb.pixels, mode="RGB").save(buf, format="PNG")
        split = _split_for(buf.getvalue(), seed, heldout_fraction)

        clean_rel = f"{split}/non_degraded/{pair_id}.png"
        degraded_rel = f"{split}/paired_degraded/{pair_id}.png"
        (root / clean_rel).parent.mkdir(parents=True, exist_ok=True)
        (root / clean_rel).write_bytes(buf.getvalue())
        save_png(lab_to_rgb(degraded), root / degraded_rel)

        entries.append(ManifestEntry(path=clean_rel, role="non_degraded", pair_id=pair_id, split=split))
        entries.append(
            ManifestEntry(path=degraded_rel, role="paired_degraded", pair_id=pair_id, split=split)
        )

    manifest = CorpusManifest(root=root, entries=entries)
    manifest.save()
    return manifest


def load_lab(manifest: CorpusManifest, entry: ManifestEntry) -> LabImage:
    return rgb_to_lab(load_png(manifest.resolve(entry)))


def load_luminance(
    manifest: CorpusManifest, entry: ManifestEntry, tag: DomainTag
) -> LuminancePlane:
    return luminance_8bit(load_lab(manifest, entry), tag)
