"""Versioned npz checkpoint container shared by the codec and the generator."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data_model import GCBError


class CheckpointError(GCBError, ValueError):
    pass


def write_npz(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write a versioned npz container; arrays are stored little-endian, C order."""
    payload = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        payload[name] = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def read_npz(path: str | Path, kind: str, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        if "__meta__" not in data:
            raise CheckpointError(f"{path} is not a gcb checkpoint")
        meta = json.loads(bytes(data["__meta__"]).decode())
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
    if meta.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {meta.get('kind')!r} checkpoint, expected {kind!r}")
    if meta.get("format_version") != version:
        raise CheckpointError(f"{path}: format_version {meta.get('format_version')} != {version}")
    return meta, arrays


def array_digest(arrays: dict[str, np.ndarray]) -> str:
    """SHA-256 over names, dtypes, shapes and raw bytes, in sorted name order."""
    import hashlib

    h = hashlib.sha256()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        h.update(f"{name}|{arr.dtype.str}|{arr.shape}".encode())
        h.update(arr.tobytes())
    return h.hexdigest()
