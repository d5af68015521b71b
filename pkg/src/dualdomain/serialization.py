"""Weight serialization: flat little-endian binary plus a JSON shape sidecar."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


class ManifestError(ValueError):
    """Raised when a sidecar manifest disagrees with the binary payload."""


def sidecar_path(bin_path) -> Path:
    return Path(str(bin_path) + ".json")


def save_weights(arrays: dict[str, np.ndarray], bin_path, meta: dict | None = None) -> None:
    """Write arrays to `bin_path` (concatenated float64 LE) plus a sidecar."""
    bin_path = Path(bin_path)
    names = list(arrays.keys())
    flat = np.concatenate([np.asarray(arrays[k], dtype="<f8").ravel() for k in names]) \
        if names else np.zeros(0, dtype="<f8")
    bin_path.write_bytes(flat.astype("<f8").tobytes())
    manifest = {
        "dtype": "<f8",
        "layers": [{"name": k, "shape": list(np.asarray(arrays[k]).shape)} for k in names],
    }
    if meta:
        manifest["meta"] = meta
    sidecar_path(bin_path).write_text(json.dumps(manifest, indent=2))


def load_weights(bin_path) -> tuple[dict[str, np.ndarray], dict]:
    """Read arrays back, validating the manifest against the payload size."""
    bin_path = Path(bin_path)
    manifest = json.loads(sidecar_path(bin_path).read_text())
    if manifest.get("dtype") != "<f8":
        raise ManifestError(f"unsupported dtype {manifest.get('dtype')!r}")
    raw = np.frombuffer(bin_path.read_bytes(), dtype="<f8")
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for layer in manifest["layers"]:
        shape = tuple(int(s) for s in layer["shape"])
        count = int(np.prod(shape)) if shape else 1
        if offset + count > raw.size:
            raise ManifestError(
                f"manifest layer {layer['name']!r} of shape {shape} overruns "
                f"the binary payload ({raw.size} values total)"
            )
        arrays[layer["name"]] = raw[offset:offset + count].reshape(shape).copy()
        offset += count
    if offset != raw.size:
        raise ManifestError(
            f"binary payload has {raw.size} values but manifest accounts for {offset}"
        )
    return arrays, manifest.get("meta", {})


def weights_bytes(arrays: dict[str, np.ndarray]) -> bytes:
    """Canonical byte string of a weight dict, for frozen-state comparisons."""
    chunks = []
    for name in sorted(arrays.keys()):
        chunks.append(name.encode())
        chunks.append(np.asarray(arrays[name], dtype="<f8").tobytes())
    return b"".join(chunks)
