"""Checkpoint archive: one zip holding named parameter arrays as .npy
members plus a JSON header (shapes, step count, config hash).

Zip entries carry a constant timestamp so the same parameters always
produce byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

_EPOCH = (1980, 1, 1, 0, 0, 0)
HEADER_NAME = "header.json"


def save_checkpoint(
    path: str | Path, arrays: dict[str, np.ndarray], header: dict | None = None
) -> None:
    header = dict(header or {})
    header["shapes"] = {name: list(a.shape) for name, a in sorted(arrays.items())}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        info = zipfile.ZipInfo(HEADER_NAME, date_time=_EPOCH)
        zf.writestr(info, json.dumps(header, indent=2, sort_keys=True))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arrays[name]))
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH), buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read(HEADER_NAME))
            arrays = {}
            for entry in zf.namelist():
                if entry == HEADER_NAME:
                    continue
                if not entry.endswith(".npy"):
                    raise CheckpointError(f"unexpected archive member {entry!r} in {path}")
                arrays[entry[: -len(".npy")]] = np.load(io.BytesIO(zf.read(entry)))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    for name, shape in header.get("shapes", {}).items():
        if name not in arrays or list(arrays[name].shape) != shape:
            raise CheckpointError(f"checkpoint {path} inconsistent for parameter {name!r}")
    return arrays, header
