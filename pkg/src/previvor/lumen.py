"""Luminance enhancement: a VAE over the shared (real + synthetic)
degraded domain, a VAE over the non-degraded domain, and a residual
mapping network translating between their latent spaces.

Restoration decodes a degraded plane through the non-degraded decoder:
decode_nd(map(encode_shared(L))). Training is fully seeded; all loops
abort with diagnostics on any non-finite loss.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import degrade
from .corpus import CorpusManifest, load_luminance
from .errors import ConfigError, StateError
from .imagecore import DomainTag, LuminancePlane
from .nnet import tensor as T
from .nnet.checkpoint import load_checkpoint, save_checkpoint
from .nnet.layers import Conv2d, LatentDiscriminator, Module, PatchDiscriminator
from .nnet.losses import adversarial_losses, kl_loss, pixel_loss
from .nnet.optim import AdamW, LrSchedule
from .nnet.tensor import Tensor
from .nnet.trainstate import load_train_state, save_train_state

SHARED_DOMAIN = "shared_degraded"
ND_DOMAIN = "non_degraded"

_DEGRADED_TAGS = (DomainTag.REAL_DEGRADED, DomainTag.SYNTHETIC_DEGRADED)


@dataclass(frozen=True)
class LumenLossWeights:
    """Per-term weights for the luminance stage: the mapping latent-L1
    weight defaults to 60, everything else to 1, with a small KL
    coefficient to keep the posterior regularized at toy scale."""

    pixel: float = 1.0
    adv: float = 1.0
    feat: float = 1.0
    latent_adv: float = 1.0
    kl: float = 0.01
    latent_l1: float = 60.0


@dataclass(frozen=True)
class LumenTrainConfig:
    batch_size: int = 32
    resolution: int = 64
    iterations: int = 200
    seed: int = 0
    base_channels: int = 32
    channel_mult: tuple[int, ...] = (1, 2, 2)
    latent_channels: int = 8
    mapping_blocks: int = 6
    mapping_dim: int = 512
    weights: LumenLossWeights = LumenLossWeights()
    schedule: LrSchedule = field(default_factory=LrSchedule)
    disc_schedule: LrSchedule | None = None  # None: same as schedule
    degradation: degrade.DegradationSamplerConfig = degrade.DegradationSamplerConfig(
        curve_pool=(), mode_probability=0.0
    )
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        res = self.resolution
        if res < 32 or res & (res - 1):
            raise ConfigError("resolution must be a power of two >= 32")


def toy_lumen_config(seed: int = 0, iterations: int = 200) -> LumenTrainConfig:
    """Desk-scale preset: small batch, narrow mapping, and a learning rate
    sized for a few hundred iterations instead of tens of thousands."""
    return LumenTrainConfig(
        batch_size=4, iterations=iterations, seed=seed, mapping_dim=64,
        latent_channels=8, schedule=LrSchedule(initial=5e-4),
        disc_schedule=LrSchedule(initial=1e-4),
    )


def _normalize(planes: np.ndarray) -> np.ndarray:
    return planes / 127.5 - 1.0


def _denormalize(values: np.ndarray) -> np.ndarray:
    return np.clip((values + 1.0) * 127.5, 0.0, 255.0)


class Vae(Module):
    """Strided conv encoder with mu/logvar heads and a mirrored
    upsampling decoder; `domain` brands which luminance domain the
    parameters model."""

    def __init__(self, cfg: LumenTrainConfig, domain: str, rng: np.random.Generator):
        if domain not in (SHARED_DOMAIN, ND_DOMAIN):
            raise ConfigError(f"unknown VAE domain {domain!r}")
        self.domain = domain
        chans = [cfg.base_channels * m for m in cfg.channel_mult]
        self.enc = []
        prev = 1
        for c in chans:
            self.enc.append(Conv2d(prev, c, 3, rng, stride=2))
            prev = c
        self.mu_head = Conv2d(prev, cfg.latent_channels, 3, rng)
        self.logvar_head = Conv2d(prev, cfg.latent_channels, 3, rng)
        self.dec_in = Conv2d(cfg.latent_channels, prev, 3, rng)
        self.dec = []
        for c in reversed(chans[:-1]):
            self.dec.append(Conv2d(prev, c, 3, rng))
            prev = c
        self.dec.append(Conv2d(prev, cfg.base_channels, 3, rng))
        self.out_conv = Conv2d(cfg.base_channels, 1, 3, rng)
        self.latent_channels = cfg.latent_channels
        self.down_factor = 2 ** len(chans)

    def encode(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = x
        for conv in self.enc:
            h = T.leaky_relu(conv(h))
        return self.mu_head(h), self.logvar_head(h)

    def decode(self, z: Tensor) -> Tensor:
        h = T.leaky_relu(self.dec_in(z))
        for conv in self.dec:
            h = T.leaky_relu(conv(T.upsample_nearest2x(h)))
        return T.tanh(self.out_conv(h))

    def forward(self, x: Tensor, eps: np.ndarray | None = None):
        """Returns (reconstruction, mu, logvar, latent); eps=None means the
        posterior mean (inference mode)."""
        mu, logvar = self.encode(x)
        if eps is None:
            z = mu
        else:
            z = mu + T.exp(logvar * 0.5) * Tensor(eps)
        return self.decode(z), mu, logvar, z


class MappingBlock(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.conv1 = Conv2d(dim, dim, 3, rng)
        self.conv2 = Conv2d(dim, dim, 3, rng, zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(T.leaky_relu(self.conv1(x)))


class MappingNetwork(Module):
    """Residual latent translator; identity is reachable at init because
    every block's second conv starts at zero."""

    def __init__(self, cfg: LumenTrainConfig, rng: np.random.Generator):
        self.in_proj = Conv2d(cfg.latent_channels, cfg.mapping_dim, 1, rng, padding=0)
        self.blocks = [MappingBlock(cfg.mapping_dim, rng) for _ in range(cfg.mapping_blocks)]
        self.out_proj = Conv2d(cfg.mapping_dim, cfg.latent_channels, 1, rng, padding=0)

    def __call__(self, z: Tensor) -> Tensor:
        h = self.in_proj(z)
        for block in self.blocks:
            h = block(h)
        return self.out_proj(h)


def freeze(module: Module) -> None:
    for p in module.parameters():
        p.requires_grad = False


def is_frozen(module: Module) -> bool:
    return all(not p.requires_grad for _, p in _all_named(module))


def _all_named(module: Module):
    # named_parameters skips frozen tensors, so walk values directly
    for attr, value in vars(module).items():
        if isinstance(value, Tensor):
            yield attr, value
        elif isinstance(value, Module):
            yield from ((f"{attr}.{n}", p) for n, p in _all_named(value))
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                if isinstance(item, Module):
                    yield from ((f"{attr}.{i}.{n}", p) for n, p in _all_named(item))
                elif isinstance(item, Tensor):
                    yield f"{attr}.{i}", item


def vae_forward(
    vae: Vae, plane: LuminancePlane, rng: np.random.Generator | None = None
) -> tuple[LuminancePlane, np.ndarray, np.ndarray, np.ndarray]:
    """Single-plane convenience wrapper around Vae.forward."""
    x = Tensor(_normalize(plane.values)[None, :, :, None])
    eps = None if rng is None else rng.standard_normal(
        (1, plane.shape[0] // vae.down_factor, plane.shape[1] // vae.down_factor,
         vae.latent_channels)
    )
    recon, mu, logvar, z = vae.forward(x, eps)
    out = LuminancePlane(
        values=_denormalize(recon.values[0, :, :, 0]), domain_tag=plane.domain_tag
    )
    return out, mu.values.copy(), logvar.values.copy(), z.values.copy()


# ---- training ---------------------------------------------------------------


def _require_finite(terms: dict[str, float], iteration: int) -> None:
    for name, value in terms.items():
        if not np.isfinite(value):
            raise StateError(f"non-finite loss {name}={value} at iteration {iteration}")


class _LuminancePools:
    """In-memory luminance pools read once from a manifest."""

    def __init__(self, manifest: CorpusManifest, resolution: int):
        self.rd = [
            load_luminance(manifest, e, DomainTag.REAL_DEGRADED).values
            for e in manifest.by_role("real_degraded", "paired_degraded", split="train")
        ]
        self.nd = [
            load_luminance(manifest, e, DomainTag.NON_DEGRADED).values
            for e in manifest.by_role("non_degraded", "paired_restored", split="train")
        ]
        for plane in self.rd + self.nd:
            if plane.shape != (resolution, resolution):
                raise ConfigError(
                    f"corpus image shape {plane.shape} does not match configured "
                    f"resolution {resolution}"
                )

    def sample_nd(self, rng) -> np.ndarray:
        return self.nd[int(rng.integers(len(self.nd)))]

    def sample_rd(self, rng) -> np.ndarray:
        return self.rd[int(rng.integers(len(self.rd)))]

    def sample_sd(self, cfg: LumenTrainConfig, rng) -> np.ndarray:
        plane = LuminancePlane(values=self.sample_nd(rng), domain_tag=DomainTag.NON_DEGRADED)
        out, _ = degrade.sample_degradation(plane, cfg.degradation, rng)
        return out.values


def _maybe_checkpoint(out_dir, name, module, cfg_hash, step, every):
    if out_dir is None or every <= 0:
        return
    if (step + 1) % every == 0:
        save_checkpoint(
            Path(out_dir) / f"{name}_{step + 1:06d}.ckpt",
            module.state_arrays(),
            header={"step_count": step + 1, "config_hash": cfg_hash},
        )


def _config_hash(cfg: LumenTrainConfig) -> str:
    blob = json.dumps(
        {k: str(v) for k, v in sorted(vars(cfg).items())}, sort_keys=True
    ).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def train_vae_shared(
    cfg: LumenTrainConfig,
    manifest: CorpusManifest,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> tuple[Vae, PatchDiscriminator, LatentDiscriminator, list[dict]]:
    """First VAE: shared latent over real and synthetic degraded planes.

    Per iteration each batch slot draws a real-degraded or a freshly
    synthesized degraded sample with equal probability. Generator loss is
    pixel (smooth L1) + adv + feature-match + latent-adv + KL.
    """
    pools = _LuminancePools(manifest, cfg.resolution)
    if not pools.rd or not pools.nd:
        raise ConfigError("corpus must provide degraded and non-degraded images")
    rng = np.random.default_rng(cfg.seed)
    vae = Vae(cfg, SHARED_DOMAIN, rng)
    img_disc = PatchDiscriminator(1, rng)
    lat_disc = LatentDiscriminator(
        cfg.latent_channels, cfg.resolution // (2 ** len(cfg.channel_mult)), rng
    )
    d_sched = cfg.disc_schedule or cfg.schedule
    opt_g = AdamW(vae.parameters(), schedule=cfg.schedule)
    opt_d = AdamW(img_disc.parameters(), schedule=d_sched)
    opt_ld = AdamW(lat_disc.parameters(), schedule=d_sched)
    cfg_hash = _config_hash(cfg)
    w = cfg.weights
    log: list[dict] = []
    modules = {"vae": vae, "disc": img_disc, "latdisc": lat_disc}
    optimizers = {"opt_g": opt_g, "opt_d": opt_d, "opt_ld": opt_ld}
    start_it = 0
    if resume_from is not None:
        start_it = load_train_state(resume_from, rng, modules, optimizers)

    for it in range(start_it, cfg.iterations):
        batch = np.empty((cfg.batch_size, cfg.resolution, cfg.resolution, 1))
        is_rd = np.zeros(cfg.batch_size, dtype=bool)
        for i in range(cfg.batch_size):
            if rng.uniform() < 0.5:
                batch[i, :, :, 0] = pools.sample_rd(rng)
                is_rd[i] = True
            else:
                batch[i, :, :, 0] = pools.sample_sd(cfg, rng)
        x = Tensor(_normalize(batch))
        eps = rng.standard_normal(
            (cfg.batch_size, cfg.resolution // vae.down_factor,
             cfg.resolution // vae.down_factor, cfg.latent_channels)
        )
        recon, mu, logvar, z = vae.forward(x, eps)

        pix = pixel_loss(recon, x, smooth=True)
        adv_g, adv_d, feat = adversarial_losses(img_disc, x, recon)
        kl = kl_loss(mu, logvar)

        # latent adversary: real-degraded latents are "real", synthetic "fake";
        # the encoder confuses both directions symmetrically
        rd_idx, sd_idx = np.nonzero(is_rd)[0], np.nonzero(~is_rd)[0]
        have_both = len(rd_idx) > 0 and len(sd_idx) > 0
        if have_both:
            ladv_g = lat_disc(z[rd_idx]).mean() - lat_disc(z[sd_idx]).mean()
        else:
            ladv_g = Tensor(0.0)
        total = w.pixel * pix + w.adv * adv_g + w.feat * feat + w.latent_adv * ladv_g + w.kl * kl
        T.backward(total)
        opt_g.step()
        opt_g.zero_grad()
        opt_d.zero_grad()
        opt_ld.zero_grad()

        T.backward(adv_d)
        opt_d.step()
        for opt in (opt_g, opt_d, opt_ld):
            opt.zero_grad()

        lat_d_val = 0.0
        if have_both:
            z_const = z.detach()
            lat_d = (
                T.relu(1.0 - lat_disc(z_const[rd_idx])).mean()
                + T.relu(1.0 + lat_disc(z_const[sd_idx])).mean()
            )
            T.backward(lat_d)
            opt_ld.step()
            for opt in (opt_g, opt_d, opt_ld):
                opt.zero_grad()
            lat_d_val = lat_d.item()

        entry = {
            "iteration": it,
            "pixel": pix.item(),
            "adv": adv_g.item(),
            "feat": feat.item(),
            "latent_adv": ladv_g.item(),
            "kl": kl.item(),
            "total": total.item(),
            "disc": adv_d.item(),
            "latent_disc": lat_d_val,
            "lr": opt_g.current_lr(),
        }
        _require_finite(entry, it)
        log.append(entry)
        _maybe_checkpoint(out_dir, "vae_shared", vae, cfg_hash, it, cfg.checkpoint_every)
        if out_dir is not None and cfg.checkpoint_every > 0 and (it + 1) % cfg.checkpoint_every == 0:
            save_train_state(
                Path(out_dir) / "state_vae_shared.ckpt", it + 1, rng, modules, optimizers, cfg_hash
            )

    return vae, img_disc, lat_disc, log


def train_vae_nd(
    cfg: LumenTrainConfig,
    manifest: CorpusManifest,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> tuple[Vae, PatchDiscriminator, list[dict]]:
    """Second VAE: non-degraded luminance only, hence no latent adversary.
    Generator decomposition has exactly four terms: pixel, adv, feat, kl."""
    pools = _LuminancePools(manifest, cfg.resolution)
    if not pools.nd:
        raise ConfigError("corpus must provide non-degraded images")
    rng = np.random.default_rng(cfg.seed)
    vae = Vae(cfg, ND_DOMAIN, rng)
    img_disc = PatchDiscriminator(1, rng)
    opt_g = AdamW(vae.parameters(), schedule=cfg.schedule)
    opt_d = AdamW(img_disc.parameters(), schedule=cfg.disc_schedule or cfg.schedule)
    cfg_hash = _config_hash(cfg)
    w = cfg.weights
    log: list[dict] = []
    modules = {"vae": vae, "disc": img_disc}
    optimizers = {"opt_g": opt_g, "opt_d": opt_d}
    start_it = 0
    if resume_from is not None:
        start_it = load_train_state(resume_from, rng, modules, optimizers)

    for it in range(start_it, cfg.iterations):
        batch = np.stack([pools.sample_nd(rng) for _ in range(cfg.batch_size)])[..., None]
        x = Tensor(_normalize(batch))
        eps = rng.standard_normal(
            (cfg.batch_size, cfg.resolution // vae.down_factor,
             cfg.resolution // vae.down_factor, cfg.latent_channels)
        )
        recon, mu, logvar, _ = vae.forward(x, eps)

        pix = pixel_loss(recon, x, smooth=True)
        adv_g, adv_d, feat = adversarial_losses(img_disc, x, recon)
        kl = kl_loss(mu, logvar)
        total = w.pixel * pix + w.adv * adv_g + w.feat * feat + w.kl * kl
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
            "feat": feat.item(),
            "kl": kl.item(),
            "total": total.item(),
            "disc": adv_d.item(),
            "lr": opt_g.current_lr(),
        }
        _require_finite(entry, it)
        log.append(entry)
        _maybe_checkpoint(out_dir, "vae_nd", vae, cfg_hash, it, cfg.checkpoint_every)
        if out_dir is not None and cfg.checkpoint_every > 0 and (it + 1) % cfg.checkpoint_every == 0:
            save_train_state(
                Path(out_dir) / "state_vae_nd.ckpt", it + 1, rng, modules, optimizers, cfg_hash
            )

    return vae, img_disc, log


def train_mapping(
    cfg: LumenTrainConfig,
    manifest: CorpusManifest,
    shared_vae: Vae,
    nd_vae: Vae,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> tuple[MappingNetwork, PatchDiscriminator, list[dict]]:
    """Latent translator between the two frozen VAEs.

    Pairs are synthetic: a non-degraded plane and its freshly degraded
    counterpart, so the latent L1 target is pixel-aligned. Loss is
    pixel + adv + feat + latent_l1 (weight 60 by default).
    """
    if not (is_frozen(shared_vae) and is_frozen(nd_vae)):
        raise StateError("both VAEs must be frozen before mapping training")
    if shared_vae.domain != SHARED_DOMAIN or nd_vae.domain != ND_DOMAIN:
        raise StateError("mapping needs the shared-degraded and non-degraded VAEs")
    pools = _LuminancePools(manifest, cfg.resolution)
    if not pools.nd:
        raise ConfigError("corpus must provide non-degraded images")
    rng = np.random.default_rng(cfg.seed)
    mapping = MappingNetwork(cfg, rng)
    img_disc = PatchDiscriminator(1, rng)
    opt_g = AdamW(mapping.parameters(), schedule=cfg.schedule)
    opt_d = AdamW(img_disc.parameters(), schedule=cfg.disc_schedule or cfg.schedule)
    cfg_hash = _config_hash(cfg)
    w = cfg.weights
    log: list[dict] = []
    modules = {"mapping": mapping, "disc": img_disc}
    optimizers = {"opt_g": opt_g, "opt_d": opt_d}
    start_it = 0
    if resume_from is not None:
        start_it = load_train_state(resume_from, rng, modules, optimizers)

    for it in range(start_it, cfg.iterations):
        nd_batch = np.stack([pools.sample_nd(rng) for _ in range(cfg.batch_size)])[..., None]
        sd_batch = np.empty_like(nd_batch)
        for i in range(cfg.batch_size):
            plane = LuminancePlane(
                values=nd_batch[i, :, :, 0], domain_tag=DomainTag.NON_DEGRADED
            )
            sd_batch[i, :, :, 0] = degrade.sample_degradation(plane, cfg.degradation, rng)[0].values

        x_nd = Tensor(_normalize(nd_batch))
        x_sd = Tensor(_normalize(sd_batch))
        mu_sd, _ = shared_vae.encode(x_sd)
        mu_nd, _ = nd_vae.encode(x_nd)
        mapped = mapping(mu_sd)
        recon = nd_vae.decode(mapped)

        pix = pixel_loss(recon, x_nd, smooth=True)
        adv_g, adv_d, feat = adversarial_losses(img_disc, x_nd, recon)
        latent_l1 = T.absolute(mapped - mu_nd.detach()).mean()
        total = w.pixel * pix + w.adv * adv_g + w.feat * feat + w.latent_l1 * latent_l1
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
            "feat": feat.item(),
            "latent_l1": latent_l1.item(),
            "total": total.item(),
            "disc": adv_d.item(),
            "lr": opt_g.current_lr(),
        }
        _require_finite(entry, it)
        log.append(entry)
        _maybe_checkpoint(out_dir, "mapping", mapping, cfg_hash, it, cfg.checkpoint_every)
        if out_dir is not None and cfg.checkpoint_every > 0 and (it + 1) % cfg.checkpoint_every == 0:
            save_train_state(
                Path(out_dir) / "state_mapping.ckpt", it + 1, rng, modules, optimizers, cfg_hash
            )

    return mapping, img_disc, log


# ---- inference and persistence ----------------------------------------------


@dataclass
class LumenBundle:
    shared: Vae
    nd: Vae
    mapping: MappingNetwork
    config: LumenTrainConfig


def restore_luminance(plane: LuminancePlane, bundle: LumenBundle) -> LuminancePlane:
    """decode_nd(map(encode_shared(L))) at the posterior mean, clamped to
    [0, 255] and tagged restored. Refuses non-degraded inputs."""
    if plane.domain_tag not in _DEGRADED_TAGS:
        raise StateError(
            f"restore_luminance expects a degraded plane, got {plane.domain_tag.value}"
        )
    if bundle.nd.domain != ND_DOMAIN or bundle.shared.domain != SHARED_DOMAIN:
        raise StateError("bundle domains are mislabeled")
    res = bundle.config.resolution
    if plane.shape != (res, res):
        raise ConfigError(f"plane shape {plane.shape} does not match trained resolution {res}")
    x = Tensor(_normalize(plane.values)[None, :, :, None])
    mu, _ = bundle.shared.encode(x)
    out = bundle.nd.decode(bundle.mapping(mu))
    return LuminancePlane(
        values=_denormalize(out.values[0, :, :, 0]), domain_tag=DomainTag.RESTORED
    )


def save_lumen_bundle(
    path: str | Path, bundle: LumenBundle, config_hash: str = "", step_count: int | None = None
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for prefix, module in (("shared", bundle.shared), ("nd", bundle.nd), ("mapping", bundle.mapping)):
        for name, p in _all_named(module):
            arrays[f"{prefix}.{name}"] = p.values.copy()
    cfg = bundle.config
    header = {
        "kind": "lumen_bundle",
        "step_count": cfg.iterations if step_count is None else step_count,
        "config_hash": config_hash or _config_hash(cfg),
        "arch": {
            "base_channels": cfg.base_channels,
            "channel_mult": list(cfg.channel_mult),
            "latent_channels": cfg.latent_channels,
            "mapping_blocks": cfg.mapping_blocks,
            "mapping_dim": cfg.mapping_dim,
            "resolution": cfg.resolution,
        },
    }
    save_checkpoint(path, arrays, header)


def load_lumen_bundle(path: str | Path) -> LumenBundle:
    arrays, header = load_checkpoint(path)
    if header.get("kind") != "lumen_bundle":
        raise StateError(f"{path} is not a luminance-stage bundle")
    arch = header["arch"]
    cfg = LumenTrainConfig(
        base_channels=arch["base_channels"],
        channel_mult=tuple(arch["channel_mult"]),
        latent_channels=arch["latent_channels"],
        mapping_blocks=arch["mapping_blocks"],
        mapping_dim=arch["mapping_dim"],
        resolution=arch["resolution"],
    )
    rng = np.random.default_rng(0)
    bundle = LumenBundle(
        shared=Vae(cfg, SHARED_DOMAIN, rng),
        nd=Vae(cfg, ND_DOMAIN, rng),
        mapping=MappingNetwork(cfg, rng),
        config=cfg,
    )
    for prefix, module in (("shared", bundle.shared), ("nd", bundle.nd), ("mapping", bundle.mapping)):
        for name, p in _all_named(module):
            key = f"{prefix}.{name}"
            if key not in arrays:
                raise StateError(f"bundle missing parameter {key}")
            p.values = np.array(arrays[key])
    for module in (bundle.shared, bundle.nd, bundle.mapping):
        freeze(module)
    return bundle


def latent_domain_probe_accuracy(
    vae: Vae,
    rd_planes: list[np.ndarray],
    sd_planes: list[np.ndarray],
    seed: int = 0,
) -> float:
    """Held-out accuracy of a linear (LDA) probe separating real-degraded
    from synthetic-degraded latents; 0.5 means the domains are aligned."""
    feats, labels = [], []
    for label, planes in ((1, rd_planes), (0, sd_planes)):
        for plane in planes:
            mu, _ = vae.encode(Tensor(_normalize(plane)[None, :, :, None]))
            feats.append(mu.values.mean(axis=(1, 2)).ravel())
            labels.append(label)
    feats = np.stack(feats)
    labels = np.array(labels)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labels))
    feats, labels = feats[order], labels[order]
    half = len(labels) // 2
    tr_x, tr_y = feats[:half], labels[:half]
    te_x, te_y = feats[half:], labels[half:]

    mu1 = tr_x[tr_y == 1].mean(axis=0)
    mu0 = tr_x[tr_y == 0].mean(axis=0)
    centered = np.concatenate([tr_x[tr_y == 1] - mu1, tr_x[tr_y == 0] - mu0])
    sw = centered.T @ centered / max(1, len(centered)) + 1e-6 * np.eye(feats.shape[1])
    w = np.linalg.solve(sw, mu1 - mu0)
    threshold = 0.5 * (mu1 + mu0) @ w
    pred = (te_x @ w > threshold).astype(int)
    return float((pred == te_y).mean())
