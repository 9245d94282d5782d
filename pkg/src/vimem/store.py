"""Bit-exact persistent format for embedding databases and patch grids.

A store is an immutable, id-sorted collection of (id, vector, label)
records; the on-disk layout is fixed little-endian so that two writes of
the same store are byte-identical:

    "VMEM" | version u32 | dim u32 | count u64 | flags u32 (bit0=normalized)
    count x { id u64 | label i64 | dim x f32 }

Patch grids use a distinct magic because their shape metadata differs:

    "VGRD" | version u32 | dim u32 | rows u32 | cols u32 | image_id u64
    rows*cols*dim x f32
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    FormatError,
    InvariantError,
    TruncatedError,
    ZeroNormError,
)

STORE_MAGIC = b"VMEM"
GRID_MAGIC = b"VGRD"
FORMAT_VERSION = 1

#: Label value meaning "this record carries no class label".
UNLABELED = -1

_FLAG_NORMALIZED = 0x1
_STORE_HEADER = struct.Struct("<4sIIQI")  # magic, version, dim, count, flags
_GRID_HEADER = struct.Struct("<4sIIIIQ")  # magic, version, dim, rows, cols, image_id

#: Tolerance on the unit-norm invariant of normalized stores.
NORM_TOLERANCE = 1e-5


@dataclass(frozen=True)
class EmbeddingRecord:
    """One (id, vector, label) row of a store."""

    id: int
    vector: np.ndarray
    label: int = UNLABELED


@dataclass(frozen=True)
class EmbeddingStore:
    """Immutable, id-sorted embedding database (the "visual memory").

    Backed by flat arrays rather than per-record objects so the search
    and audit paths stay vectorized. `vectors` is (n, d) float32, `ids`
    is (n,) uint64 strictly increasing, `labels` is (n,) int64 with
    `UNLABELED` (-1) for unlabeled records.
    """

    ids: np.ndarray
    labels: np.ndarray
    vectors: np.ndarray
    normalized: bool = False
    class_names: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        for arr in (self.ids, self.labels, self.vectors):
            arr.flags.writeable = False

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def records(self) -> Iterator[EmbeddingRecord]:
        for i in range(len(self)):
            yield EmbeddingRecord(int(self.ids[i]), self.vectors[i], int(self.labels[i]))

    @cached_property
    def vectors64(self) -> np.ndarray:
        """Float64 view of the vectors; dot products accumulate in 64-bit."""
        v = self.vectors.astype(np.float64)
        v.flags.writeable = False
        return v

    @cached_property
    def norms64(self) -> np.ndarray:
        n = np.linalg.norm(self.vectors64, axis=1)
        n.flags.writeable = False
        return n

    def index_of(self, ids: np.ndarray | Sequence[int]) -> np.ndarray:
        """Row indices of the given ids (ids are kept sorted)."""
        ids = np.asarray(ids, dtype=np.uint64)
        if len(self) == 0:
            if ids.size:
                raise InvariantError(f"unknown record ids: {sorted(int(i) for i in ids)}")
            return np.zeros(0, dtype=np.intp)
        idx = np.searchsorted(self.ids, ids)
        bad = (idx >= len(self)) | (self.ids[np.minimum(idx, len(self) - 1)] != ids)
        if bad.any():
            raise InvariantError(f"unknown record ids: {sorted(int(i) for i in ids[bad])}")
        return idx

    def labels_of(self, ids: np.ndarray | Sequence[int]) -> np.ndarray:
        return self.labels[self.index_of(ids)]


def make_store(
    ids: Sequence[int] | np.ndarray,
    vectors: np.ndarray,
    labels: Sequence[int] | np.ndarray | None = None,
    normalized: bool = False,
    class_names: Sequence[str] | None = None,
) -> EmbeddingStore:
    """Build and validate a store from arrays.

    Records are sorted by id; ids must be unique. `labels=None` marks
    every record unlabeled.
    """
    ids = np.asarray(ids, dtype=np.uint64)
    vectors = np.ascontiguousarray(np.asarray(vectors, dtype=np.float32))
    if vectors.ndim != 2:
        raise InvariantError(f"vectors must be 2-D, got shape {vectors.shape}")
    if labels is None:
        labels = np.full(len(ids), UNLABELED, dtype=np.int64)
    else:
        labels = np.asarray(labels, dtype=np.int64)
    order = np.argsort(ids, kind="stable")
    store = EmbeddingStore(
        ids=ids[order],
        labels=labels[order],
        vectors=vectors[order],
        normalized=normalized,
        class_names=tuple(class_names) if class_names is not None else None,
    )
    validate_store(store)
    return store


def from_records(
    records: Iterable[EmbeddingRecord],
    dim: int | None = None,
    normalized: bool = False,
    class_names: Sequence[str] | None = None,
) -> EmbeddingStore:
    recs = list(records)
    if not recs and dim is None:
        raise InvariantError("empty record list needs an explicit dim")
    d = dim if dim is not None else len(recs[0].vector)
    vectors = np.zeros((len(recs), d), dtype=np.float32)
    for i, r in enumerate(recs):
        v = np.asarray(r.vector, dtype=np.float32)
        if v.shape != (d,):
            raise DimensionMismatchError(f"record {r.id}: vector shape {v.shape} != ({d},)")
        vectors[i] = v
    return make_store(
        [r.id for r in recs],
        vectors,
        [r.label for r in recs],
        normalized=normalized,
        class_names=class_names,
    )


def validate_store(store: EmbeddingStore) -> None:
    """Raise InvariantError when any EmbeddingStore invariant is broken."""
    n = len(store)
    if store.vectors.shape[0] != n or store.labels.shape[0] != n:
        raise InvariantError("ids, labels, and vectors disagree on record count")
    if store.dim < 1:
        raise InvariantError(f"dim must be >= 1, got {store.dim}")
    if n > 1 and not (store.ids[1:] > store.ids[:-1]).all():
        raise InvariantError("record ids must be strictly increasing")
    if not np.isfinite(store.vectors).all():
        bad = np.where(~np.isfinite(store.vectors).all(axis=1))[0]
        raise InvariantError(f"non-finite vector components in records {store.ids[bad].tolist()}")
    if (store.labels < UNLABELED).any():
        raise InvariantError("labels must be class indices >= 0 or the unlabeled sentinel -1")
    if store.class_names is not None:
        top = int(store.labels.max(initial=UNLABELED))
        if top >= len(store.class_names):
            raise InvariantError(
                f"label {top} out of range for {len(store.class_names)} class names"
            )
    if store.normalized and n > 0:
        norms = np.linalg.norm(store.vectors.astype(np.float64), axis=1)
        off = np.abs(norms - 1.0) > NORM_TOLERANCE
        if off.any():
            raise InvariantError(
                f"store flagged normalized but records {store.ids[off].tolist()} "
                "have non-unit norm"
            )


def l2_normalize(store: EmbeddingStore) -> EmbeddingStore:
    """Return a copy of the store with every vector scaled to unit L2 norm.

    Zero-norm vectors are a hard error (cosine similarity is undefined
    for them); the error names the offending ids.
    """
    norms = np.linalg.norm(store.vectors.astype(np.float64), axis=1)
    zero = norms == 0.0
    if zero.any():
        raise ZeroNormError(f"zero-norm vectors for ids {store.ids[zero].tolist()}")
    vectors = (store.vectors.astype(np.float64) / norms[:, None]).astype(np.float32)
    return replace(store, vectors=vectors, normalized=True)


@dataclass(frozen=True)
class PatchGrid:
    """H x W grid of d-dimensional patch embeddings for one image."""

    image_id: int
    patches: np.ndarray  # (rows, cols, dim) float32

    def __post_init__(self) -> None:
        self.patches.flags.writeable = False

    @property
    def rows(self) -> int:
        return int(self.patches.shape[0])

    @property
    def cols(self) -> int:
        return int(self.patches.shape[1])

    @property
    def dim(self) -> int:
        return int(self.patches.shape[2])


def make_grid(image_id: int, patches: np.ndarray) -> PatchGrid:
    patches = np.ascontiguousarray(np.asarray(patches, dtype=np.float32))
    if patches.ndim != 3:
        raise InvariantError(f"patches must be rows x cols x dim, got shape {patches.shape}")
    grid = PatchGrid(image_id=int(image_id), patches=patches)
    validate_grid(grid)
    return grid


def validate_grid(grid: PatchGrid) -> None:
    if grid.rows < 1 or grid.cols < 1 or grid.dim < 1:
        raise InvariantError(f"grid shape must be positive, got {grid.patches.shape}")
    if grid.image_id < 0:
        raise InvariantError("image_id must be unsigned")
    if not np.isfinite(grid.patches).all():
        raise InvariantError("non-finite patch components")


# ---------------------------------------------------------------------------
# binary I/O


def write_store(store: EmbeddingStore, path: str | Path) -> None:
    """Serialize a store; identical stores produce byte-identical files."""
    validate_store(store)
    flags = _FLAG_NORMALIZED if store.normalized else 0
    header = _STORE_HEADER.pack(STORE_MAGIC, FORMAT_VERSION, store.dim, len(store), flags)
    payload = np.empty(len(store), dtype=_record_dtype(store.dim))
    payload["id"] = store.ids
    payload["label"] = store.labels
    payload["vec"] = store.vectors
    Path(path).write_bytes(header + payload.tobytes())


def read_store(path: str | Path) -> EmbeddingStore:
    """Load and validate a store file.

    Corrupt magic, short payloads, and invariant violations each raise a
    distinct error class (BadMagicError, TruncatedError, InvariantError).
    """
    blob = Path(path).read_bytes()
    if len(blob) < _STORE_HEADER.size:
        raise TruncatedError(f"{path}: file shorter than the {_STORE_HEADER.size}-byte header")
    magic, version, dim, count, flags = _STORE_HEADER.unpack_from(blob)
    if magic != STORE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {STORE_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if dim < 1:
        raise FormatError(f"{path}: declared dim {dim} < 1")
    if flags & ~_FLAG_NORMALIZED:
        raise FormatError(f"{path}: unknown flag bits 0x{flags:x}")
    expected = count * (16 + 4 * dim)
    payload = blob[_STORE_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedError(
            f"{path}: declared {count} records need {expected} payload bytes, "
            f"found {len(payload)}"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    rows = np.frombuffer(payload, dtype=_record_dtype(dim), count=count)
    store = EmbeddingStore(
        ids=rows["id"].copy(),
        labels=rows["label"].copy(),
        vectors=np.ascontiguousarray(rows["vec"]),
        normalized=bool(flags & _FLAG_NORMALIZED),
    )
    validate_store(store)
    return store


def _record_dtype(dim: int) -> np.dtype:
    return np.dtype([("id", "<u8"), ("label", "<i8"), ("vec", "<f4", (dim,))])


def write_grid(grid: PatchGrid, path: str | Path) -> None:
    validate_grid(grid)
    header = _GRID_HEADER.pack(
        GRID_MAGIC, FORMAT_VERSION, grid.dim, grid.rows, grid.cols, grid.image_id
    )
    data = np.ascontiguousarray(grid.patches, dtype="<f4")
    Path(path).write_bytes(header + data.tobytes())


def read_grid(path: str | Path) -> PatchGrid:
    blob = Path(path).read_bytes()
    if len(blob) < _GRID_HEADER.size:
        raise TruncatedError(f"{path}: file shorter than the {_GRID_HEADER.size}-byte header")
    magic, version, dim, rows, cols, image_id = _GRID_HEADER.unpack_from(blob)
    if magic != GRID_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {GRID_MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    expected = rows * cols * dim * 4
    payload = blob[_GRID_HEADER.size:]
    if len(payload) < expected:
        raise TruncatedError(f"{path}: grid payload truncated ({len(payload)} < {expected})")
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    patches = np.frombuffer(payload, dtype="<f4").reshape(rows, cols, dim).copy()
    grid = PatchGrid(image_id=image_id, patches=patches)
    validate_grid(grid)
    return grid


# ---------------------------------------------------------------------------
# manifest sidecar


def manifest_path(store_path: str | Path) -> Path:
    return Path(str(store_path) + ".json")


def write_manifest(
    store: EmbeddingStore,
    store_path: str | Path,
    source: str = "",
    seed: int | None = None,
) -> Path:
    """Write the UTF-8 JSON sidecar next to a store file."""
    doc = {
        "dim": store.dim,
        "count": len(store),
        "class_names": list(store.class_names) if store.class_names is not None else None,
        "source": source,
        "seed": seed,
    }
    path = manifest_path(store_path)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(store_path: str | Path) -> dict:
    return json.loads(manifest_path(store_path).read_text(encoding="utf-8"))
