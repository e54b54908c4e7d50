"""Portable JSON weights file: tensor name -> {"shape": [...], "data": [...]}.

Values are written with Python's shortest-exact float repr, so a load
reproduces every tensor bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class WeightsFormatError(ValueError):
    """Raised when a weights payload is malformed."""


def save_weights(tensors: dict[str, np.ndarray], path: str | Path | None = None) -> bytes:
    payload = {
        name: {"shape": list(t.shape), "data": np.asarray(t, dtype=np.float64).ravel().tolist()}
        for name, t in tensors.items()
    }
    data = json.dumps(payload).encode("utf-8")
    if path is not None:
        Path(path).write_bytes(data)
    return data


def load_weights(data: bytes | str | Path) -> dict[str, np.ndarray]:
    if isinstance(data, Path):
        data = data.read_bytes()
    try:
        payload = json.loads(data)
    except json.JSONDecodeError as exc:
        raise WeightsFormatError(f"invalid weights JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise WeightsFormatError("weights payload must be a JSON object")
    tensors: dict[str, np.ndarray] = {}
    for name, entry in payload.items():
        if not isinstance(entry, dict) or "shape" not in entry or "data" not in entry:
            raise WeightsFormatError(f"{name}: entry must contain shape and data")
        shape = tuple(entry["shape"])
        values = np.asarray(entry["data"], dtype=np.float64)
        if int(np.prod(shape)) != values.size:
            raise WeightsFormatError(f"{name}: shape {shape} does not match {values.size} values")
        if not np.all(np.isfinite(values)):
            raise WeightsFormatError(f"{name}: non-finite values")
        tensors[name] = values.reshape(shape)
    return tensors
