"""Checkpoint format: JSON manifest + one little-endian float64 raw blob.

The manifest lists tensor names, shapes and byte offsets into the blob, plus
a free-form `meta` section for scalars such as normalization statistics.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .tensor import Tensor

MANIFEST_SUFFIX = ".json"
BLOB_SUFFIX = ".bin"


def save_checkpoint(stem: str | Path, tensors: dict[str, Tensor | np.ndarray],
                    meta: dict | None = None) -> None:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    blob = bytearray()
    for name in sorted(tensors):
        t = tensors[name]
        arr = np.ascontiguousarray(t.data if isinstance(t, Tensor) else t, dtype="<f8")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float64",
            "offset": len(blob),
            "nbytes": arr.nbytes,
        })
        blob.extend(arr.tobytes())
    manifest = {
        "format": "permaphys-checkpoint-v1",
        "byte_order": "little",
        "tensors": entries,
        "meta": meta or {},
    }
    stem.with_suffix(BLOB_SUFFIX).write_bytes(bytes(blob))
    stem.with_suffix(MANIFEST_SUFFIX).write_text(
        json.dumps(manifest, indent=1, sort_keys=True))


def load_checkpoint(stem: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    stem = Path(stem)
    manifest = json.loads(stem.with_suffix(MANIFEST_SUFFIX).read_text())
    blob = stem.with_suffix(BLOB_SUFFIX).read_bytes()
    tensors = {}
    for e in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype="<f8", count=int(np.prod(e["shape"], dtype=int)),
                            offset=e["offset"])
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return tensors, manifest.get("meta", {})


def checkpoint_hash(stem: str | Path) -> str:
    stem = Path(stem)
    h = hashlib.sha256()
    h.update(stem.with_suffix(MANIFEST_SUFFIX).read_bytes())
    h.update(stem.with_suffix(BLOB_SUFFIX).read_bytes())
    return h.hexdigest()
