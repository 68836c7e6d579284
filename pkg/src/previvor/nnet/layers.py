"""Layers built on the autodiff tensor: convolutions, attention, MLPs,
normalization, and the small discriminators used by both training stages.

Every layer takes an explicit numpy Generator at construction so that
parameter initialization, and therefore training, is fully seeded.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal parameter container with recursive discovery."""

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        found: list[tuple[str, Tensor]] = []
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                found.append((name, value))
            elif isinstance(value, Module):
                found.extend(value.named_parameters(prefix=f"{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.extend(item.named_parameters(prefix=f"{name}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        found.append((f"{name}.{i}", item))
        return found

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.values.copy() for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(arrays)
        if missing:
            raise KeyError(f"missing parameters in checkpoint: {sorted(missing)[:4]}...")
        for name, p in own.items():
            if arrays[name].shape != p.shape:
                raise ValueError(
                    f"parameter {name} shape mismatch: {arrays[name].shape} vs {p.shape}"
                )
            p.values = np.array(arrays[name], dtype=np.float64)


def _param(rng: np.random.Generator, shape, fan_in: int, name: str) -> Tensor:
    scale = np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, name=name)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng, stride: int = 1,
                 padding: int | None = None, bias: bool = True, zero_init: bool = False):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = in_ch * kernel * kernel
        if zero_init:
            self.weight = Tensor(np.zeros((kernel, kernel, in_ch, out_ch)), requires_grad=True)
        else:
            self.weight = _param(rng, (kernel, kernel, in_ch, out_ch), fan_in, "w")
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng, bias: bool = True):
        self.weight = _param(rng, (in_dim, out_dim), in_dim, "w")
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered * ((var + self.eps) ** -0.5)
        return normed * self.gamma + self.beta


class Mlp(Module):
    """Two-layer feed-forward block with a ReLU in between."""

    def __init__(self, dim: int, hidden: int, rng, out_dim: int | None = None):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, out_dim or dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class MultiheadAttention(Module):
    """Scaled dot-product attention over (B, N, D) token sets.

    The attention probabilities of the latest forward pass are kept on
    `last_attention` for instrumentation (rows sum to 1 by construction).
    """

    def __init__(self, dim: int, heads: int, rng):
        if dim % heads != 0:
            raise ValueError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng)
        self.k_proj = Linear(dim, dim, rng)
        self.v_proj = Linear(dim, dim, rng)
        self.out_proj = Linear(dim, dim, rng)
        self.last_attention: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, N, _ = x.shape
        return x.reshape((B, N, self.heads, self.dim // self.heads)).transpose((0, 2, 1, 3))

    def __call__(self, query: Tensor, keyval: Tensor) -> Tensor:
        B, NQ, _ = query.shape
        q = self._split(self.q_proj(query))
        k = self._split(self.k_proj(keyval))
        v = self._split(self.v_proj(keyval))
        scale = (self.dim // self.heads) ** -0.5
        logits = (q @ k.transpose((0, 1, 3, 2))) * scale
        attn = T.softmax(logits, axis=-1)
        self.last_attention = attn.values
        mixed = attn @ v  # (B, h, NQ, dh)
        merged = mixed.transpose((0, 2, 1, 3)).reshape((B, NQ, self.dim))
        return self.out_proj(merged)


class PatchDiscriminator(Module):
    """4-layer strided conv discriminator emitting a logit map.

    forward_features returns the intermediate activations for the
    feature-matching loss.
    """

    def __init__(self, in_ch: int, rng, base: int = 32):
        chans = [base, base * 2, base * 2]
        self.convs = []
        prev = in_ch
        for c in chans:
            self.convs.append(Conv2d(prev, c, 4, rng, stride=2, padding=1))
            prev = c
        self.head = Conv2d(prev, 1, 3, rng, stride=1, padding=1)

    def forward_features(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        feats = []
        h = x
        for conv in self.convs:
            h = T.leaky_relu(conv(h))
            feats.append(h)
        return self.head(h), feats

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward_features(x)[0]


class LatentDiscriminator(Module):
    """3-layer MLP over flattened latents."""

    def __init__(self, latent_ch: int, spatial: int, rng, hidden: int = 64):
        in_dim = latent_ch * spatial * spatial
        self.in_dim = in_dim
        self.fc1 = Linear(in_dim, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.fc3 = Linear(hidden, 1, rng)

    def forward_features(self, z: Tensor) -> tuple[Tensor, list[Tensor]]:
        flat = z.reshape((z.shape[0], self.in_dim))
        h1 = T.leaky_relu(self.fc1(flat))
        h2 = T.leaky_relu(self.fc2(h1))
        return self.fc3(h2), [h1, h2]

    def __call__(self, z: Tensor) -> Tensor:
        return self.forward_features(z)[0]


class RandomFeaturePyramid:
    """Fixed, seeded 3-level strided conv feature stack.

    Stands in for a pretrained perceptual backbone: the weights are
    never trained, but gradients flow through to the inputs.
    """

    def __init__(self, in_ch: int, seed: int = 0, base: int = 16):
        rng = np.random.default_rng(seed)
        self.seed = seed
        self.weights = []
        prev = in_ch
        for level in range(3):
            out = base * (level + 1)
            w = Tensor(rng.normal(0.0, np.sqrt(2.0 / (prev * 9)), size=(3, 3, prev, out)))
            self.weights.append(w)
            prev = out

    def __call__(self, x: Tensor) -> list[Tensor]:
        feats = []
        h = x
        for w in self.weights:
            h = T.relu(T.conv2d(h, w, None, stride=2, padding=1))
            feats.append(h)
        return feats
