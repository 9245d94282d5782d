"""Writers for the vimem binary file contract.

The adapter produces files the memory engine consumes; it never imports
the engine. These writers implement the published byte layout directly:

    VMEM: "VMEM" | version u32 | dim u32 | count u64 | flags u32
          then count x ( id u64 | label i64 | dim x f32 ), little-endian
    VGRD: "VGRD" | version u32 | dim u32 | rows u32 | cols u32 | image_id u64
          then rows*cols*dim f32, row-major

plus the JSON sidecar manifest at "<path>.json".
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

STORE_MAGIC = b"VMEM"
GRID_MAGIC = b"VGRD"
FORMAT_VERSION = 1
UNLABELED = -1

_STORE_HEADER = struct.Struct("<4sIIQI")
_GRID_HEADER = struct.Struct("<4sIIIIQ")


def write_vmem(
    path: str | Path,
    vectors: np.ndarray,
    ids: np.ndarray | None = None,
    labels: np.ndarray | None = None,
) -> None:
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2:
        raise ValueError(f"vectors must be 2-D, got shape {vectors.shape}")
    n, dim = vectors.shape
    if ids is None:
        ids = np.arange(n, dtype=np.uint64)
    else:
        ids = np.asarray(ids, dtype=np.uint64)
    if labels is None:
        labels = np.full(n, UNLABELED, dtype=np.int64)
    else:
        labels = np.asarray(labels, dtype=np.int64)
    if len(ids) != n or len(labels) != n:
        raise ValueError("ids/labels length does not match vector count")

    parts = [_STORE_HEADER.pack(STORE_MAGIC, FORMAT_VERSION, dim, n, 0)]
    rec = struct.Struct(f"<Qq{dim}f")
    for i in range(n):
        parts.append(rec.pack(int(ids[i]), int(labels[i]), *vectors[i].tolist()))
    Path(path).write_bytes(b"".join(parts))


def write_vgrd(path: str | Path, patches: np.ndarray, image_id: int) -> None:
    patches = np.ascontiguousarray(patches, dtype=np.float32)
    if patches.ndim != 3:
        raise ValueError(f"patches must be rows x cols x dim, got shape {patches.shape}")
    rows, cols, dim = patches.shape
    header = _GRID_HEADER.pack(GRID_MAGIC, FORMAT_VERSION, dim, rows, cols, image_id)
    Path(path).write_bytes(header + patches.tobytes())


def write_manifest(path: str | Path, doc: dict) -> Path:
    sidecar = Path(str(path) + ".json")
    sidecar.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return sidecar
