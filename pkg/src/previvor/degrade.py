"""Luminance and chroma degradation simulators.

Two luminance models: a linear fade L' = alpha*L + beta with alpha in
[0.2, 0.5] and beta in [15, 25] (8-bit units), and empirical bin-wise
curves fitted from degraded/restored pairs. Chroma fading is a
sign-dependent linear attenuation of the a/b planes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, EmptyInputError
from .imagecore import ChromaPlanes, DomainTag, LuminancePlane

ALPHA_RANGE = (0.2, 0.5)
BETA_RANGE = (15.0, 25.0)
GAMMA_NEG_RANGE = (0.2, 0.5)
GAMMA_POS_RANGE = (0.5, 0.9)
DEFAULT_BINS = 32


@dataclass(frozen=True)
class LinearCurveParams:
    """Slope/offset of the linear luminance fade."""

    alpha: float
    beta: float

    def __post_init__(self):
        if not (ALPHA_RANGE[0] <= self.alpha <= ALPHA_RANGE[1]):
            raise ConfigError(f"alpha {self.alpha} outside {ALPHA_RANGE}")
        if not (BETA_RANGE[0] <= self.beta <= BETA_RANGE[1]):
            raise ConfigError(f"beta {self.beta} outside {BETA_RANGE}")


@dataclass(frozen=True)
class AttenuationParams:
    """Sign-dependent chroma shrink factors."""

    gamma_neg: float
    gamma_pos: float

    def __post_init__(self):
        if not (GAMMA_NEG_RANGE[0] <= self.gamma_neg <= GAMMA_NEG_RANGE[1]):
            raise ConfigError(f"gamma_neg {self.gamma_neg} outside {GAMMA_NEG_RANGE}")
        if not (GAMMA_POS_RANGE[0] <= self.gamma_pos <= GAMMA_POS_RANGE[1]):
            raise ConfigError(f"gamma_pos {self.gamma_pos} outside {GAMMA_POS_RANGE}")


@dataclass(frozen=True)
class EmpiricalCurve:
    """Binned mean luminance delta (degraded - restored) over [0, 255].

    Bins with count zero hold values interpolated from their nearest
    populated neighbors; `counts` records which bins were observed.
    """

    bin_edges: np.ndarray  # B+1 ascending floats spanning [0, 255]
    mean_delta: np.ndarray  # B floats
    counts: np.ndarray  # B non-negative ints

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        delta = np.asarray(self.mean_delta, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.int64)
        if edges.ndim != 1 or edges.size < 2:
            raise ConfigError("bin_edges must be a 1-D array with at least 2 entries")
        if np.any(np.diff(edges) <= 0):
            raise ConfigError("bin_edges must be strictly ascending")
        if delta.shape != (edges.size - 1,) or counts.shape != delta.shape:
            raise DimensionError("mean_delta and counts must have one entry per bin")
        if np.any(counts < 0):
            raise ConfigError("bin counts must be non-negative")
        if not np.all(np.isfinite(delta[counts > 0])):
            raise ConfigError("mean_delta must be finite for populated bins")
        for name, arr in (("bin_edges", edges), ("mean_delta", delta), ("counts", counts)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def bin_centers(self) -> np.ndarray:
        return (self.bin_edges[:-1] + self.bin_edges[1:]) / 2.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "bin_edges": self.bin_edges.tolist(),
                "mean_delta": self.mean_delta.tolist(),
                "counts": self.counts.tolist(),
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "EmpiricalCurve":
        data = json.loads(text)
        return cls(
            bin_edges=np.array(data["bin_edges"]),
            mean_delta=np.array(data["mean_delta"]),
            counts=np.array(data["counts"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "EmpiricalCurve":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class DegradationSamplerConfig:
    """How sample_degradation picks between linear and empirical fades."""

    curve_pool: tuple[EmpiricalCurve, ...] = ()
    mode_probability: float = 0.5  # probability of drawing an empirical curve
    alpha_range: tuple[float, float] = ALPHA_RANGE
    beta_range: tuple[float, float] = BETA_RANGE

    def __post_init__(self):
        if not (0.0 <= self.mode_probability <= 1.0):
            raise ConfigError("mode_probability must lie in [0, 1]")
        if len(self.curve_pool) == 0 and self.mode_probability > 0.0:
            raise ConfigError("empty curve pool requires mode_probability = 0")
        object.__setattr__(self, "curve_pool", tuple(self.curve_pool))


@dataclass(frozen=True)
class DegradationChoice:
    """Record of one sampler draw, enough to replay it exactly."""

    mode: str  # "linear" or "empirical"
    linear: LinearCurveParams | None = None
    curve_index: int | None = None


def fit_empirical_curve(
    pairs: list[tuple[LuminancePlane, LuminancePlane]], bins: int = DEFAULT_BINS
) -> EmpiricalCurve:
    """Fit a bin-wise degradation curve from (degraded, restored) pairs.

    Pixels are bucketed by restored luminance into `bins` equal-width bins
    over [0, 255]; each bin stores the mean per-pixel delta
    (degraded - restored). Empty bins are filled by linear interpolation
    between the nearest populated neighbors (flat beyond the outermost).
    """
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    if len(pairs) == 0:
        raise EmptyInputError("no (degraded, restored) pairs supplied")

    edges = np.linspace(0.0, 255.0, bins + 1)
    sums = np.zeros(bins)
    counts = np.zeros(bins, dtype=np.int64)
    for degraded, restored in pairs:
        if degraded.shape != restored.shape:
            raise DimensionError(
                f"pair dimensions differ: {degraded.shape} vs {restored.shape}"
            )
        ref = restored.values.ravel()
        delta = degraded.values.ravel() - ref
        idx = np.minimum((ref / 255.0 * bins).astype(np.int64), bins - 1)
        sums += np.bincount(idx, weights=delta, minlength=bins)
        counts += np.bincount(idx, minlength=bins)

    populated = counts > 0
    if not populated.any():
        raise EmptyInputError("pairs contain no pixels")
    mean_delta = np.zeros(bins)
    mean_delta[populated] = sums[populated] / counts[populated]
    if not populated.all():
        centers = (edges[:-1] + edges[1:]) / 2.0
        mean_delta[~populated] = np.interp(
            centers[~populated], centers[populated], mean_delta[populated]
        )
    return EmpiricalCurve(bin_edges=edges, mean_delta=mean_delta, counts=counts)


def apply_linear_degradation(L_nd: LuminancePlane, params: LinearCurveParams) -> LuminancePlane:
    """Linear fade: clamp(alpha * L + beta, 0, 255), tagged synthetic."""
    if L_nd.domain_tag is not DomainTag.NON_DEGRADED:
        raise ConfigError(f"expected a non_degraded plane, got {L_nd.domain_tag.value}")
    out = np.clip(params.alpha * L_nd.values + params.beta, 0.0, 255.0)
    return LuminancePlane(values=out, domain_tag=DomainTag.SYNTHETIC_DEGRADED)


def apply_empirical_curve(L_nd: LuminancePlane, curve: EmpiricalCurve) -> LuminancePlane:
    """Apply a fitted curve as a piecewise-linear delta lookup.

    Bin centers act as knots; beyond the outermost centers the delta is
    held flat. Output is clamped to [0, 255] and tagged synthetic.
    """
    if L_nd.domain_tag is not DomainTag.NON_DEGRADED:
        raise ConfigError(f"expected a non_degraded plane, got {L_nd.domain_tag.value}")
    delta = np.interp(L_nd.values, curve.bin_centers, curve.mean_delta)
    out = np.clip(L_nd.values + delta, 0.0, 255.0)
    return LuminancePlane(values=out, domain_tag=DomainTag.SYNTHETIC_DEGRADED)


def sample_linear_params(
    rng: np.random.Generator,
    alpha_range: tuple[float, float] = ALPHA_RANGE,
    beta_range: tuple[float, float] = BETA_RANGE,
) -> LinearCurveParams:
    return LinearCurveParams(
        alpha=float(rng.uniform(*alpha_range)), beta=float(rng.uniform(*beta_range))
    )


def sample_degradation(
    L_nd: LuminancePlane, cfg: DegradationSamplerConfig, rng: np.random.Generator
) -> tuple[LuminancePlane, DegradationChoice]:
    """Degrade a plane with an empirical curve (w.p. mode_probability) or a
    freshly sampled linear fade, returning the choice for reproducibility."""
    use_empirical = rng.uniform() < cfg.mode_probability
    if use_empirical:
        if len(cfg.curve_pool) == 0:
            raise ConfigError("empirical branch chosen but curve pool is empty")
        idx = int(rng.integers(len(cfg.curve_pool)))
        out = apply_empirical_curve(L_nd, cfg.curve_pool[idx])
        return out, DegradationChoice(mode="empirical", curve_index=idx)
    params = sample_linear_params(rng, cfg.alpha_range, cfg.beta_range)
    return apply_linear_degradation(L_nd, params), DegradationChoice(mode="linear", linear=params)


def sample_attenuation_params(rng: np.random.Generator) -> AttenuationParams:
    """One gamma per sign, sampled once per image."""
    return AttenuationParams(
        gamma_neg=float(rng.uniform(*GAMMA_NEG_RANGE)),
        gamma_pos=float(rng.uniform(*GAMMA_POS_RANGE)),
    )


def attenuate_chroma(prior: ChromaPlanes, params: AttenuationParams) -> ChromaPlanes:
    """Shrink chroma toward zero: negative values scale by gamma_neg,
    positive by gamma_pos, zeros stay. Applied to a and b independently."""

    def shrink(plane: np.ndarray) -> np.ndarray:
        return np.where(plane < 0.0, plane * params.gamma_neg, plane * params.gamma_pos)

    return ChromaPlanes(a=shrink(prior.a), b=shrink(prior.b))
