"""Run-configuration loading: section wiring, seed priority, strict key
validation, and hash stability."""

import numpy as np
import pytest

from previvor.config import config_hash, load_run_config
from previvor.degrade import EmpiricalCurve
from previvor.errors import ConfigError


def test_defaults_without_file():
    cfg = load_run_config(None, env={})
    assert cfg.seed == 0
    assert cfg.lumen.mapping_blocks == 6
    assert cfg.lumen.mapping_dim == 512
    assert cfg.hue.batch_size == 4
    assert cfg.prior.tau == 20.0


def test_sections_wire_into_stages(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text(
        "\n".join(
            [
                "seed = 11",
                "[prior]",
                "tau = 35.0",
                "k = 2",
                "[lumen]",
                "batch_size = 2",
                "[hue]",
                "num_queries = 8",
                "[degrade]",
                "alpha_range = [0.25, 0.45]",
            ]
        )
    )
    cfg = load_run_config(path)
    assert cfg.seed == 11
    assert cfg.lumen.seed == 11 and cfg.hue.seed == 11
    assert cfg.hue.prior.tau == 35.0 and cfg.hue.prior.k == 2
    assert cfg.lumen.degradation.alpha_range == (0.25, 0.45)
    assert cfg.hue.num_queries == 8


def test_curve_files_loaded_into_pool(tmp_path):
    curve = EmpiricalCurve(
        bin_edges=np.linspace(0, 255, 9), mean_delta=np.full(8, -12.0), counts=np.ones(8, int)
    )
    curve.save(tmp_path / "curve.json")
    path = tmp_path / "run.toml"
    path.write_text('[degrade]\nmode_probability = 0.5\ncurve_files = ["curve.json"]\n')
    cfg = load_run_config(path)
    assert len(cfg.lumen.degradation.curve_pool) == 1
    assert cfg.lumen.degradation.mode_probability == 0.5


def test_missing_curve_file_rejected(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('[degrade]\nmode_probability = 0.5\ncurve_files = ["gone.json"]\n')
    with pytest.raises(ConfigError, match="curve file"):
        load_run_config(path)


def test_seed_priority():
    assert load_run_config(None, env={}).seed == 0
    assert load_run_config(None, env={"PREVIVOR_SEED": "3"}).seed == 3
    assert load_run_config(None, seed_override=9, env={"PREVIVOR_SEED": "3"}).seed == 9


def test_config_seed_beats_env(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("seed = 4\n")
    assert load_run_config(path, env={"PREVIVOR_SEED": "3"}).seed == 4


def test_unknown_key_rejected_with_path(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("[lumen]\nbogus = 1\n")
    with pytest.raises(ConfigError, match="lumen.bogus"):
        load_run_config(path)


def test_nested_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("[hue.weights]\nshiny = 1.0\n")
    with pytest.raises(ConfigError, match="hue.weights.shiny"):
        load_run_config(path)


def test_invalid_toml_rejected(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text("not toml ===")
    with pytest.raises(ConfigError, match="TOML"):
        load_run_config(path)


def test_hash_stable_and_sensitive(tmp_path):
    a = load_run_config(None, env={})
    b = load_run_config(None, env={})
    assert config_hash(a) == config_hash(b)
    path = tmp_path / "run.toml"
    path.write_text("seed = 123\n")
    c = load_run_config(path)
    assert config_hash(c) != config_hash(a)


def test_bad_env_seed_rejected():
    with pytest.raises(ConfigError):
        load_run_config(None, env={"PREVIVOR_SEED": "not-a-number"})
