"""Resumable training state: module parameters, optimizer moments, the
rng state, and the iteration counter, in one checkpoint archive."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Module
from .optim import AdamW


def save_train_state(
    path: str | Path,
    iteration: int,
    rng: np.random.Generator,
    modules: dict[str, Module],
    opts: dict[str, AdamW],
    config_hash: str = "",
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for mod_name, module in modules.items():
        for pname, p in module.named_parameters():
            arrays[f"{mod_name}.{pname}"] = p.values.copy()
    opt_steps = {}
    for opt_name, opt in opts.items():
        for i, (m, v) in enumerate(zip(opt.m, opt.v)):
            arrays[f"{opt_name}.m.{i:04d}"] = m.copy()
            arrays[f"{opt_name}.v.{i:04d}"] = v.copy()
        opt_steps[opt_name] = opt.step_count
    header = {
        "kind": "train_state",
        "iteration": iteration,
        "rng_state": rng.bit_generator.state,
        "opt_steps": opt_steps,
        "config_hash": config_hash,
    }
    save_checkpoint(path, arrays, header)


def load_train_state(
    path: str | Path,
    rng: np.random.Generator,
    modules: dict[str, Module],
    opts: dict[str, AdamW],
) -> int:
    """Restore everything in place; returns the iteration to continue from."""
    arrays, header = load_checkpoint(path)
    if header.get("kind") != "train_state":
        raise CheckpointError(f"{path} is not a training-state checkpoint")
    for mod_name, module in modules.items():
        own = dict(module.named_parameters())
        for pname, p in own.items():
            key = f"{mod_name}.{pname}"
            if key not in arrays:
                raise CheckpointError(f"training state missing {key}")
            p.values = np.array(arrays[key])
    for opt_name, opt in opts.items():
        for i in range(len(opt.params)):
            opt.m[i] = np.array(arrays[f"{opt_name}.m.{i:04d}"])
            opt.v[i] = np.array(arrays[f"{opt_name}.v.{i:04d}"])
        opt.step_count = int(header["opt_steps"][opt_name])
    state = header["rng_state"]
    # JSON round-trips the state dict faithfully; numpy accepts it directly
    rng.bit_generator.state = state
    return int(header["iteration"])
