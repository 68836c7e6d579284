"""Run configuration: one TOML file drives every pipeline stage.

Unknown keys are rejected with their full dotted path; the resolved
configuration is hashed (sha256 of canonical JSON) and that hash is
stamped into checkpoints, reports, and run metadata.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

from . import degrade
from .corpus import SynthConfig
from .errors import ConfigError
from .huecorr import HueTrainConfig
from .lumen import LumenTrainConfig
from .metrics import FeatureExtractorSpec
from .prior import PriorConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEED_ENV_VAR = "PREVIVOR_SEED"


@dataclass(frozen=True)
class CorpusSection:
    n_images: int = 20
    heldout_fraction: float = 0.1
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass(frozen=True)
class DegradeSection:
    # no fitted curves by default, so the sampler stays on the linear branch
    mode_probability: float = 0.0
    curve_files: tuple[str, ...] = ()
    alpha_range: tuple[float, float] = degrade.ALPHA_RANGE
    beta_range: tuple[float, float] = degrade.BETA_RANGE

    def build_sampler(self, base_dir: Path | None = None) -> degrade.DegradationSamplerConfig:
        pool = []
        for rel in self.curve_files:
            path = Path(rel)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            if not path.exists():
                raise ConfigError(f"degradation curve file not found: {path}")
            pool.append(degrade.EmpiricalCurve.load(path))
        return degrade.DegradationSamplerConfig(
            curve_pool=tuple(pool),
            mode_probability=self.mode_probability,
            alpha_range=self.alpha_range,
            beta_range=self.beta_range,
        )


@dataclass(frozen=True)
class EvaluateSection:
    feature_seed: int = 0
    feature_dim: int = 16
    mask_policy: str = "none"

    def __post_init__(self):
        if self.mask_policy not in ("none", "prior_mask"):
            raise ConfigError(f"unknown mask_policy {self.mask_policy!r}")

    def feature_spec(self) -> FeatureExtractorSpec:
        return FeatureExtractorSpec(seed=self.feature_seed, feature_dim=self.feature_dim)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_root: str = "runs"
    corpus: CorpusSection = field(default_factory=CorpusSection)
    degrade: DegradeSection = field(default_factory=DegradeSection)
    prior: PriorConfig = field(default_factory=PriorConfig)
    lumen: LumenTrainConfig = field(default_factory=LumenTrainConfig)
    hue: HueTrainConfig = field(default_factory=HueTrainConfig)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)

    def resolved(self, base_dir: Path | None = None) -> "RunConfig":
        """Wire the cross-section pieces: the sampler into the luminance
        stage, the prior config into the hue stage, the seed everywhere."""
        sampler = self.degrade.build_sampler(base_dir)
        lumen_cfg = dataclasses.replace(self.lumen, degradation=sampler, seed=self.seed)
        hue_cfg = dataclasses.replace(self.hue, prior=self.prior, seed=self.seed)
        return dataclasses.replace(self, lumen=lumen_cfg, hue=hue_cfg)


def _from_mapping(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a table, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path}.{key}" if path else f"unknown config key {key}")
        ftype = known[key].type
        target = _dataclass_for(cls, key)
        if target is not None:
            kwargs[key] = _from_mapping(target, value, f"{path}.{key}" if path else key)
        elif isinstance(value, list):
            kwargs[key] = _tuplify(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or cls.__name__}: {exc}") from exc


def _tuplify(value):
    return tuple(_tuplify(v) if isinstance(v, list) else v for v in value)


def _dataclass_for(cls, key: str):
    for f in fields(cls):
        if f.name == key:
            if f.default is not dataclasses.MISSING and is_dataclass(type(f.default)):
                return type(f.default)
            if f.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
                produced = f.default_factory()  # type: ignore[misc]
                if is_dataclass(produced):
                    return type(produced)
    return None


def load_run_config(
    path: str | Path | None,
    seed_override: int | None = None,
    env: dict | None = None,
) -> RunConfig:
    """Load and validate a TOML run configuration.

    Seed priority: explicit override (--seed) > config file > the
    PREVIVOR_SEED environment variable > 0.
    """
    env = os.environ if env is None else env
    data: dict = {}
    base_dir = None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        base_dir = path.parent
        try:
            data = tomllib.loads(path.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML: {exc}") from exc

    cfg = _from_mapping(RunConfig, data, "")
    seed = cfg.seed
    if "seed" not in data and SEED_ENV_VAR in env:
        try:
            seed = int(env[SEED_ENV_VAR])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer") from exc
    if seed_override is not None:
        seed = seed_override
    cfg = dataclasses.replace(cfg, seed=seed)
    return cfg.resolved(base_dir)


def config_hash(cfg: RunConfig) -> str:
    """Stable short hash of the fully-resolved configuration."""

    def encode(obj):
        if is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: encode(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, (list, tuple)):
            return [encode(v) for v in obj]
        if isinstance(obj, (str, int, float, bool)) or obj is None:
            return obj
        return repr(obj)

    blob = json.dumps(encode(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
