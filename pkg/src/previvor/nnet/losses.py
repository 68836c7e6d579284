"""Loss primitives shared by both training stages.

Adversarial terms use the hinge formulation; the pixel term has a smooth
(Huber-style) variant for the luminance stage and a plain L1 variant for
the hue stage. The colorful term is the chroma-plane analog of the
opponent-channel vividness statistic, normalized by a reference level.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from ..prior import PriorMask
from . import tensor as T
from .tensor import Tensor

DEFAULT_COLORFULNESS_REF = 40.0


def pixel_loss(pred: Tensor, target: Tensor, smooth: bool = False) -> Tensor:
    """Mean reconstruction error: smooth L1 (0.5 d^2 below |d|=1, |d|-0.5
    above) or plain L1."""
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    if not smooth:
        return T.absolute(diff).mean()
    absd = np.abs(diff.values)
    quad = absd < 1.0
    # branch selection is data-dependent but constant w.r.t. the graph
    quad_mask = Tensor(quad.astype(np.float64))
    lin_mask = Tensor((~quad).astype(np.float64))
    per_elem = quad_mask * (0.5 * diff * diff) + lin_mask * (T.absolute(diff) - 0.5)
    return per_elem.mean()


def kl_loss(mu: Tensor, logvar: Tensor) -> Tensor:
    """Mean KL divergence of N(mu, exp(logvar)) from the standard normal."""
    if mu.shape != logvar.shape:
        raise DimensionError(f"shape mismatch: {mu.shape} vs {logvar.shape}")
    return (0.5 * (mu * mu + T.exp(logvar) - 1.0 - logvar)).mean()


def adversarial_losses(discriminator, real: Tensor, fake: Tensor):
    """Hinge GAN losses plus discriminator feature matching.

    Returns (gen_loss, disc_loss, feature_match_loss). The discriminator
    hinge sees the fake detached; the generator terms keep the graph to
    the fake input.
    """
    logits_real, feats_real = discriminator.forward_features(real.detach())
    logits_fake, feats_fake = discriminator.forward_features(fake)
    logits_fake_det = discriminator(fake.detach())

    gen_loss = -logits_fake.mean()
    disc_loss = T.relu(1.0 - logits_real).mean() + T.relu(1.0 + logits_fake_det).mean()

    terms = [T.absolute(ff - fr.detach()).mean() for fr, ff in zip(feats_real, feats_fake)]
    feat = terms[0]
    for t in terms[1:]:
        feat = feat + t
    feature_match = feat * (1.0 / len(terms))
    return gen_loss, disc_loss, feature_match


def perceptual_loss(pred: Tensor, target: Tensor, extractor) -> Tensor:
    """Sum over pyramid levels of mean L1 feature distance.

    The extractor must be fixed (no trainable parameters); gradients flow
    only through `pred`.
    """
    feats_pred = extractor(pred)
    feats_target = extractor(target.detach())
    total = None
    for fp, ft in zip(feats_pred, feats_target):
        term = T.absolute(fp - ft.detach()).mean()
        total = term if total is None else total + term
    return total


def colorfulness_statistic(pred_ab: Tensor) -> Tensor:
    """sigma_a + sigma_b + 0.3 * ||(mu_a, mu_b)||_2 over (B, H, W, 2) chroma."""
    if pred_ab.ndim != 4 or pred_ab.shape[3] != 2:
        raise DimensionError(f"expected (B, H, W, 2) chroma, got {pred_ab.shape}")
    a = pred_ab[:, :, :, 0]
    b = pred_ab[:, :, :, 1]

    def std(plane: Tensor) -> Tensor:
        mu = plane.mean(axis=(1, 2), keepdims=True)
        centered = plane - mu
        return T.sqrt((centered * centered).mean(axis=(1, 2)))

    mu_a = a.mean(axis=(1, 2))
    mu_b = b.mean(axis=(1, 2))
    return std(a) + std(b) + 0.3 * T.sqrt(mu_a * mu_a + mu_b * mu_b)


def colorful_loss(pred_ab: Tensor, c_ref: float = DEFAULT_COLORFULNESS_REF) -> Tensor:
    """1 - clamp(C / C_ref, 0, 1), averaged over the batch. Zero chroma is
    maximally dull (loss 1); anything at or above the reference is 0."""
    stat = colorfulness_statistic(pred_ab)
    return (1.0 - T.clamp(stat * (1.0 / c_ref), 0.0, 1.0)).mean()


def masked_pixel_loss(pred: Tensor, target: Tensor, mask: PriorMask | np.ndarray) -> Tensor:
    """L1 summed over mask=1 pixels, divided by max(1, #masked pixels).

    The mask broadcasts over batch/channel dims and is constant in the
    graph.
    """
    if pred.shape != target.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {target.shape}")
    m = mask.mask if isinstance(mask, PriorMask) else np.asarray(mask)
    m = m.astype(np.float64)
    if m.ndim == 2 and pred.ndim == 4:
        m = m[None, :, :, None]  # broadcast over batch and channels-last
    weights = np.broadcast_to(m, pred.shape)
    count = float(weights.sum())
    masked = T.absolute(pred - target) * Tensor(weights.copy())
    return masked.sum() * (1.0 / max(1.0, count))
