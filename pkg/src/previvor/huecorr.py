"""Hue correction: a conv pyramid over the full Lab input, a pixel
decoder with skip connections, learnable color queries refined by
cross/self-attention decoder blocks, and a dot-product fusion head that
emits bounded ab planes.

The encoder consumes the enhanced luminance together with the masked,
attenuation-faded residual chroma prior; training pairs are built from
non-degraded paintings whose own priors are synthetically faded.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import degrade, lumen, prior as prior_mod
from .corpus import CorpusManifest, load_lab
from .errors import ConfigError, SilkEstimationError, StateError
from .imagecore import ChromaPlanes, DomainTag, LabImage, LuminancePlane, RgbImage, lab_to_rgb, luminance_8bit
from .nnet import tensor as T
from .nnet.checkpoint import load_checkpoint, save_checkpoint
from .nnet.layers import (
    Conv2d,
    LayerNorm,
    Linear,
    Mlp,
    Module,
    MultiheadAttention,
    PatchDiscriminator,
    RandomFeaturePyramid,
)
from .nnet.losses import (
    DEFAULT_COLORFULNESS_REF,
    adversarial_losses,
    colorful_loss,
    masked_pixel_loss,
    perceptual_loss,
    pixel_loss,
)
from .nnet.optim import AdamW, LossWeights, LrSchedule
from .nnet.tensor import Tensor
from .nnet.trainstate import load_train_state, save_train_state

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HueTrainConfig:
    batch_size: int = 4
    resolution: int = 64
    iterations: int = 200
    seed: int = 0
    base_channels: int = 16
    embed_dim: int = 32
    num_queries: int = 32
    query_dim: int = 64
    decoder_blocks: int = 3
    attention_heads: int = 4
    weights: LossWeights = field(default_factory=LossWeights)
    schedule: LrSchedule = field(default_factory=LrSchedule)
    disc_schedule: LrSchedule | None = None  # None: same as schedule
    prior: prior_mod.PriorConfig = prior_mod.PriorConfig()
    colorfulness_ref: float = DEFAULT_COLORFULNESS_REF
    checkpoint_every: int = 100
    # when set, training refuses to start unless this luminance bundle exists
    lumen_checkpoint: str | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 1:
            raise ConfigError("batch_size and iterations must be positive")
        if self.num_queries < 1:
            raise ConfigError("need at least one color query")
        if self.query_dim % self.attention_heads != 0:
            raise ConfigError("query_dim must be divisible by attention_heads")


def toy_hue_config(seed: int = 0, iterations: int = 200) -> HueTrainConfig:
    """Desk-scale preset: default weights and batch size, generator and
    discriminator rates sized for a few hundred iterations."""
    return HueTrainConfig(
        iterations=iterations, seed=seed,
        schedule=LrSchedule(initial=5e-4), disc_schedule=LrSchedule(initial=1e-4),
    )


def full_scale_hue_config(**overrides) -> HueTrainConfig:
    """The full-scale preset: 100 queries, dim 256, 9 decoder blocks,
    512 resolution, 24k iterations."""
    base = dict(
        resolution=512,
        iterations=24000,
        num_queries=100,
        query_dim=256,
        decoder_blocks=9,
        attention_heads=8,
        base_channels=64,
        embed_dim=128,
    )
    base.update(overrides)
    return HueTrainConfig(**base)


class HueNetwork(Module):
    """Encoder pyramid + pixel decoder + color-query decoder + fusion."""

    def __init__(self, cfg: HueTrainConfig, rng: np.random.Generator):
        c = cfg.base_channels
        d = cfg.query_dim
        self.cfg_blocks = cfg.decoder_blocks
        # 4-stage encoder (1/2, 1/4, 1/8, 1/16); stand-in for a pretrained
        # backbone, identity recorded in checkpoints via `encoder_kind`
        self.encoder_kind = "conv_pyramid_v1"
        self.enc1 = Conv2d(3, c, 3, rng, stride=2)
        self.enc2 = Conv2d(c, 2 * c, 3, rng, stride=2)
        self.enc3 = Conv2d(2 * c, 4 * c, 3, rng, stride=2)
        self.enc4 = Conv2d(4 * c, 4 * c, 3, rng, stride=2)
        # pixel decoder with additive skip projections
        self.skip3 = Conv2d(4 * c, 4 * c, 1, rng, padding=0)
        self.skip2 = Conv2d(2 * c, 2 * c, 1, rng, padding=0)
        self.skip1 = Conv2d(c, c, 1, rng, padding=0)
        self.up3 = Conv2d(4 * c, 4 * c, 3, rng)
        self.up2 = Conv2d(4 * c, 2 * c, 3, rng)
        self.up1 = Conv2d(2 * c, c, 3, rng)
        self.up0 = Conv2d(c, c, 3, rng)
        self.pixel_head = Conv2d(c, cfg.embed_dim, 3, rng)
        # per-scale token projections into the attention width
        self.tok16 = Conv2d(4 * c, d, 1, rng, padding=0)
        self.tok8 = Conv2d(4 * c, d, 1, rng, padding=0)
        self.tok4 = Conv2d(2 * c, d, 1, rng, padding=0)
        # learnable color queries and decoder blocks
        self.color_queries = Tensor(
            rng.normal(0.0, 0.5, size=(cfg.num_queries, d)), requires_grad=True, name="color_queries"
        )
        self.blocks = [
            _DecoderBlock(d, cfg.attention_heads, rng) for _ in range(cfg.decoder_blocks)
        ]
        self.query_embed = Linear(d, cfg.embed_dim, rng)
        self.fuse = Conv2d(cfg.num_queries, 2, 1, rng, padding=0)

    def encode_features(self, x: Tensor):
        """Multiscale features: tokens at 1/16, 1/8, 1/4 plus the
        full-resolution pixel embedding."""
        if x.shape[3] != 3:
            raise ConfigError(f"encoder expects 3 input channels, got {x.shape[3]}")
        e1 = T.leaky_relu(self.enc1(x))
        e2 = T.leaky_relu(self.enc2(e1))
        e3 = T.leaky_relu(self.enc3(e2))
        e4 = T.leaky_relu(self.enc4(e3))
        d3 = T.leaky_relu(self.up3(T.upsample_nearest2x(e4)) + self.skip3(e3))
        d2 = T.leaky_relu(self.up2(T.upsample_nearest2x(d3)) + self.skip2(e2))
        d1 = T.leaky_relu(self.up1(T.upsample_nearest2x(d2)) + self.skip1(e1))
        d0 = T.leaky_relu(self.up0(T.upsample_nearest2x(d1)))
        pixel = self.pixel_head(d0)
        tokens = [
            _to_tokens(self.tok16(e4)),
            _to_tokens(self.tok8(d3)),
            _to_tokens(self.tok4(d2)),
        ]
        return tokens, pixel

    def decode_colors(self, tokens: list[Tensor], batch: int) -> Tensor:
        """Refine the query set; block i cross-attends over scale i mod 3
        (coarse to fine round-robin)."""
        k, d = self.color_queries.shape
        q = T.broadcast_to(self.color_queries.reshape((1, k, d)), (batch, k, d))
        for i, block in enumerate(self.blocks):
            q = block(q, tokens[i % len(tokens)])
        return q

    def forward(self, x: Tensor) -> Tensor:
        """Full forward: normalized Lab input -> ab in [-1, 1] (B, H, W, 2)."""
        tokens, pixel = self.encode_features(x)
        q = self.decode_colors(tokens, x.shape[0])
        q_emb = self.query_embed(q)  # (B, K, E)
        B, H, W, E = pixel.shape
        corr = pixel.reshape((B, H * W, E)) @ q_emb.transpose((0, 2, 1))  # (B, HW, K)
        corr = corr.reshape((B, H, W, corr.shape[2])) * (1.0 / np.sqrt(E))
        return T.tanh(self.fuse(corr))

    def attention_maps(self) -> list[np.ndarray]:
        return [b.cross.last_attention for b in self.blocks]


class _DecoderBlock(Module):
    """Pre-norm cross-attention -> self-attention -> MLP, all residual."""

    def __init__(self, dim: int, heads: int, rng):
        self.norm_q = LayerNorm(dim)
        self.cross = MultiheadAttention(dim, heads, rng)
        self.norm_s = LayerNorm(dim)
        self.selfattn = MultiheadAttention(dim, heads, rng)
        self.norm_m = LayerNorm(dim)
        self.mlp = Mlp(dim, dim * 2, rng)

    def __call__(self, q: Tensor, feat: Tensor) -> Tensor:
        q = q + self.cross(self.norm_q(q), feat)
        q = q + self.selfattn(self.norm_s(q), self.norm_s(q))
        return q + self.mlp(self.norm_m(q))


def _to_tokens(feat: Tensor) -> Tensor:
    B, H, W, C = feat.shape
    return feat.reshape((B, H * W, C))


def _normalize_input(
    L8: np.ndarray, ab: tuple[np.ndarray, np.ndarray], mask: np.ndarray
) -> np.ndarray:
    """(L/100, a/128, b/128) with the chroma zeroed outside the mask."""
    return np.stack(
        [L8 / 255.0, ab[0] * mask / 128.0, ab[1] * mask / 128.0], axis=-1
    )


def correct_hue(
    L_hat: LuminancePlane,
    chroma_prior: ChromaPlanes,
    mask: prior_mod.PriorMask,
    net: HueNetwork,
) -> ChromaPlanes:
    """Predict restored ab planes from enhanced luminance and the masked
    residual prior. Deterministic; output bounded to [-127, 127]."""
    if L_hat.shape != chroma_prior.shape or L_hat.shape != mask.shape:
        raise ConfigError(
            f"shape mismatch among luminance {L_hat.shape}, prior {chroma_prior.shape}, "
            f"mask {mask.shape}"
        )
    x = _normalize_input(
        L_hat.values, (chroma_prior.a, chroma_prior.b), mask.mask.astype(np.float64)
    )[None]
    out = net.forward(Tensor(x)).values[0] * 127.0
    return ChromaPlanes(a=out[:, :, 0], b=out[:, :, 1])


@dataclass(frozen=True)
class HueTrainingSample:
    """One constructed pair: faded-prior input against the true chroma."""

    luminance: np.ndarray  # 8-bit scale
    input_ab: ChromaPlanes  # attenuated masked prior
    target_ab: ChromaPlanes  # original chroma
    mask: prior_mod.PriorMask


def make_hue_training_pair(
    nd_image: LabImage,
    prior_cfg: prior_mod.PriorConfig,
    rng: np.random.Generator,
    atten_fn: Callable[[ChromaPlanes], ChromaPlanes] | None = None,
) -> HueTrainingSample:
    """Build (input, target, mask) from a non-degraded painting.

    The prior is extracted from the painting itself, then linearly faded
    (sign-dependent gamma) to imitate degraded chroma. Raises
    SilkEstimationError when no silk is found; callers skip and log.
    """
    bg = prior_mod.background_mask(nd_image, prior_cfg)
    candidates = prior_mod.filter_silk_candidates(nd_image, bg, prior_cfg)
    silk = prior_mod.estimate_silk_color(nd_image, candidates, prior_cfg)  # may raise
    mask = prior_mod.compute_prior_mask(nd_image, silk.c_silk, prior_cfg.tau)
    chroma_prior = prior_mod.extract_prior(nd_image, mask)
    if atten_fn is None:
        params = degrade.sample_attenuation_params(rng)
        faded = degrade.attenuate_chroma(chroma_prior, params)
    else:
        faded = atten_fn(chroma_prior)
    lum = luminance_8bit(nd_image, DomainTag.NON_DEGRADED)
    return HueTrainingSample(
        luminance=lum.values, input_ab=faded, target_ab=nd_image.chroma(), mask=mask
    )


def _config_hash(cfg: HueTrainConfig) -> str:
    blob = json.dumps({k: str(v) for k, v in sorted(vars(cfg).items())}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class _HuePool:
    """Per-image cached priors; only the attenuation is redrawn per use."""

    def __init__(self, manifest: CorpusManifest, cfg: HueTrainConfig):
        self.entries = []
        self.skipped = 0
        for entry in manifest.by_role("non_degraded", "paired_restored", split="train"):
            img = load_lab(manifest, entry)
            if img.shape != (cfg.resolution, cfg.resolution):
                raise ConfigError(
                    f"corpus image shape {img.shape} does not match resolution {cfg.resolution}"
                )
            try:
                base = make_hue_training_pair(img, cfg.prior, np.random.default_rng(0))
            except SilkEstimationError:
                self.skipped += 1
                continue
            self.entries.append((img, base))
        if self.skipped:
            logger.warning("skipped %d images with no silk estimate", self.skipped)
        if not self.entries:
            raise ConfigError("no usable non-degraded images in corpus")

    def sample(self, rng: np.random.Generator) -> HueTrainingSample:
        img, base = self.entries[int(rng.integers(len(self.entries)))]
        params = degrade.sample_attenuation_params(rng)
        faded = degrade.attenuate_chroma(
            prior_mod.extract_prior(img, base.mask), params
        )
        return HueTrainingSample(
            luminance=base.luminance, input_ab=faded, target_ab=base.target_ab, mask=base.mask
        )


def train_hue(
    cfg: HueTrainConfig,
    manifest: CorpusManifest,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> tuple[HueNetwork, PatchDiscriminator, list[dict]]:
    """Alternating generator/discriminator training of the hue network.

    Generator decomposition (exactly five terms): pixel, adv, perceptual,
    colorful, masked. The discriminator and the perceptual pyramid both
    see (L, a, b) stacks in normalized units.
    """
    if cfg.lumen_checkpoint is not None and not Path(cfg.lumen_checkpoint).exists():
        raise ConfigError(
            f"configured luminance checkpoint does not exist: {cfg.lumen_checkpoint}"
        )
    pool = _HuePool(manifest, cfg)
    rng = np.random.default_rng(cfg.seed)
    net = HueNetwork(cfg, rng)
    disc = PatchDiscriminator(3, rng)
    extractor = RandomFeaturePyramid(3, seed=cfg.seed + 1)
    opt_g = AdamW(net.parameters(), schedule=cfg.schedule)
    opt_d = AdamW(disc.parameters(), schedule=cfg.disc_schedule or cfg.schedule)
    w = cfg.weights
    cfg_hash = _config_hash(cfg)
    log: list[dict] = []
    start_it = 0
    if resume_from is not None:
        start_it = load_train_state(
            resume_from, rng, {"net": net, "disc": disc}, {"opt_g": opt_g, "opt_d": opt_d}
        )

    for it in range(start_it, cfg.iterations):
        samples = [pool.sample(rng) for _ in range(cfg.batch_size)]
        x = Tensor(
            np.stack(
                [
                    _normalize_input(
                        s.luminance,
                        (s.input_ab.a, s.input_ab.b),
                        s.mask.mask.astype(np.float64),
                    )
                    for s in samples
                ]
            )
        )
        target_norm = Tensor(
            np.stack([np.stack([s.target_ab.a, s.target_ab.b], axis=-1) for s in samples]) / 128.0
        )
        masks = np.stack([s.mask.mask for s in samples])[..., None]
        lum_norm = Tensor(np.stack([s.luminance for s in samples])[..., None] / 255.0)

        pred_norm = net.forward(x)  # (B, H, W, 2) in [-1, 1]
        pred_stack = T.concat([lum_norm, pred_norm], axis=3)
        target_stack = T.concat([lum_norm, target_norm], axis=3)

        pix = pixel_loss(pred_norm, target_norm, smooth=False)
        adv_g, adv_d, _ = adversarial_losses(disc, target_stack, pred_stack)
        per = perceptual_loss(pred_stack, target_stack, extractor)
        col = colorful_loss(pred_norm * 127.0, c_ref=cfg.colorfulness_ref)
        masked = masked_pixel_loss(pred_norm, target_norm, masks)
        total = w.pix * pix + w.adv * adv_g + w.per * per + w.col * col + w.mask * masked

        T.backward(total)
        opt_g.step()
        opt_g.zero_grad()
        opt_d.zero_grad()

        T.backward(adv_d)
        opt_d.step()
        opt_g.zero_grad()
        opt_d.zero_grad()

        entry = {
            "iteration": it,
            "pixel": pix.item(),
            "adv": adv_g.item(),
            "perceptual": per.item(),
            "colorful": col.item(),
            "masked": masked.item(),
            "total": total.item(),
            "disc": adv_d.item(),
            "lr": opt_g.current_lr(),
        }
        for name, value in entry.items():
            if not np.isfinite(value):
                raise StateError(f"non-finite loss {name}={value} at iteration {it}")
        log.append(entry)
        if out_dir is not None and cfg.checkpoint_every > 0 and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(
                Path(out_dir) / f"hue_{it + 1:06d}.ckpt",
                net.state_arrays(),
                header={"step_count": it + 1, "config_hash": cfg_hash},
            )
            save_train_state(
                Path(out_dir) / "state_hue.ckpt", it + 1, rng,
                {"net": net, "disc": disc}, {"opt_g": opt_g, "opt_d": opt_d}, cfg_hash,
            )

    return net, disc, log


# ---- persistence and the full pipeline --------------------------------------


@dataclass
class HueBundle:
    net: HueNetwork
    config: HueTrainConfig


def save_hue_bundle(
    path: str | Path, bundle: HueBundle, config_hash: str = "", step_count: int | None = None
) -> None:
    cfg = bundle.config
    header = {
        "kind": "hue_bundle",
        "step_count": cfg.iterations if step_count is None else step_count,
        "config_hash": config_hash or _config_hash(cfg),
        "encoder_kind": bundle.net.encoder_kind,
        "arch": {
            "base_channels": cfg.base_channels,
            "embed_dim": cfg.embed_dim,
            "num_queries": cfg.num_queries,
            "query_dim": cfg.query_dim,
            "decoder_blocks": cfg.decoder_blocks,
            "attention_heads": cfg.attention_heads,
            "resolution": cfg.resolution,
        },
    }
    save_checkpoint(path, {n: p.values.copy() for n, p in bundle.net.named_parameters()}, header)


def load_hue_bundle(path: str | Path) -> HueBundle:
    arrays, header = load_checkpoint(path)
    if header.get("kind") != "hue_bundle":
        raise StateError(f"{path} is not a hue-stage bundle")
    arch = header["arch"]
    cfg = HueTrainConfig(
        base_channels=arch["base_channels"],
        embed_dim=arch["embed_dim"],
        num_queries=arch["num_queries"],
        query_dim=arch["query_dim"],
        decoder_blocks=arch["decoder_blocks"],
        attention_heads=arch["attention_heads"],
        resolution=arch["resolution"],
    )
    net = HueNetwork(cfg, np.random.default_rng(0))
    net.load_state_arrays(arrays)
    return HueBundle(net=net, config=cfg)


@dataclass
class RestorationResult:
    lab: LabImage
    rgb: RgbImage
    silk: prior_mod.SilkEstimate
    silk_found: bool
    mask_fraction: float


def restore_painting(
    x: LabImage,
    lumen_bundle: lumen.LumenBundle,
    hue_bundle: HueBundle,
    prior_cfg: prior_mod.PriorConfig | None = None,
) -> RestorationResult:
    """Full two-stage restoration of one degraded painting.

    Luminance is enhanced first; the color prior comes from the original
    degraded chroma; hue correction fuses both. Stage failures carry the
    stage name.
    """
    prior_cfg = prior_cfg or prior_mod.PriorConfig()
    try:
        l_hat = lumen.restore_luminance(
            luminance_8bit(x, DomainTag.REAL_DEGRADED), lumen_bundle
        )
    except Exception as exc:
        raise StateError(f"luminance stage failed: {exc}") from exc
    try:
        res = prior_mod.extract_color_prior(x, prior_cfg)
    except Exception as exc:
        raise StateError(f"prior extraction failed: {exc}") from exc
    try:
        ab_hat = correct_hue(l_hat, res.chroma_prior, res.mask, hue_bundle.net)
    except Exception as exc:
        raise StateError(f"hue stage failed: {exc}") from exc
    out = LabImage(L=l_hat.values * 100.0 / 255.0, a=ab_hat.a, b=ab_hat.b)
    return RestorationResult(
        lab=out,
        rgb=lab_to_rgb(out),
        silk=res.silk,
        silk_found=res.silk_found,
        mask_fraction=float(res.mask.mask.mean()),
    )
