"""Embedding extraction: images in, memory-engine files out.

The adapter only produces files; all classification and auditing happens
in the engine that consumes them. Global embeddings go to a .vmem store
(one record per image, ids in sorted-filename order, unlabeled), patch
embeddings to per-image .vgrd grids.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import formats
from .vit import (
    VisionTransformer,
    arch_from_state_dict,
    normalize_state_dict,
    pos_embed_resolution,
)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}

# imagenet channel statistics, the standard eval-time normalization
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class BackboneSpec:
    """What to run and how to feed it.

    `model` is either a weights path (.pth/.pt native, .onnx interchange)
    or a bare identifier; identifiers without a weights file get a
    deterministic seeded random init. `dim` is a declaration the loaded
    weights must match. Architecture fields matter only for random init;
    with a weights file, dim/patch/depth are read from the parameters.
    """

    model: str = "vit-s-random"
    resolution: int = 224
    patch_size: int = 16
    dim: int = 384
    depth: int = 12
    heads: int = 6
    seed: int = 0
    preprocessing: str = field(default="", compare=False)

    def __post_init__(self):
        if self.resolution % self.patch_size != 0:
            raise ValueError(
                f"resolution {self.resolution} not divisible by patch size {self.patch_size}"
            )
        if not self.preprocessing:
            object.__setattr__(
                self,
                "preprocessing",
                f"rgb,resize-{self.resolution}x{self.resolution}-bicubic,"
                f"scale-1/255,imagenet-norm",
            )

    @property
    def grid(self) -> int:
        return self.resolution // self.patch_size


class Backbone:
    """A loaded model bound to a spec; torch- or onnxruntime-backed."""

    def __init__(self, spec: BackboneSpec):
        self.spec = spec
        self._session = None
        self._model = None
        path = Path(spec.model)
        if path.suffix == ".onnx":
            self._session = _onnx_session(path)
        elif path.is_file():
            sd = normalize_state_dict(torch.load(path, map_location="cpu", weights_only=True))
            dim, patch, depth = arch_from_state_dict(sd)
            if dim != spec.dim:
                raise ValueError(f"declared dim {spec.dim} does not match weights dim {dim}")
            if patch != spec.patch_size:
                raise ValueError(
                    f"declared patch size {spec.patch_size} does not match weights {patch}"
                )
            res = pos_embed_resolution(sd, patch)
            if res != spec.resolution:
                raise ValueError(
                    f"weights expect {res}-pixel input, spec says {spec.resolution}"
                )
            self._model = VisionTransformer(res, patch, dim, depth, spec.heads)
            self._model.load_state_dict(sd)
        else:
            self._model = VisionTransformer(
                spec.resolution, spec.patch_size, spec.dim, spec.depth, spec.heads
            )
            self._model.seeded_init_(spec.seed)
        if self._model is not None:
            self._model.eval()

    def run(self, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(B,3,H,W) float32 -> (class tokens (B,D), patch tokens (B,N,D))."""
        if self._session is not None:
            name = self._session.get_inputs()[0].name
            out = self._session.run(None, {name: batch})[0]
            if out.ndim != 3 or out.shape[2] != self.spec.dim:
                raise ValueError(
                    f"interchange model returned shape {out.shape}, "
                    f"expected (batch, tokens, {self.spec.dim})"
                )
            return out[:, 0].copy(), out[:, 1:].copy()
        with torch.no_grad():
            cls, patches = self._model(torch.from_numpy(batch))
        return cls.numpy(), patches.numpy()


def _onnx_session(path: Path):
    try:
        import onnxruntime
    except ImportError as exc:
        raise RuntimeError(
            f"cannot load {path}: onnxruntime is not installed "
            f"(pip install embed-adapter[onnx])"
        ) from exc
    return onnxruntime.InferenceSession(str(path), providers=["CPUExecutionProvider"])


def preprocess(path: Path, spec: BackboneSpec) -> np.ndarray:
    """One image file -> (3, res, res) float32 per the recorded recipe."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize(
            (spec.resolution, spec.resolution), Image.Resampling.BICUBIC
        )
    arr = np.asarray(rgb, dtype=np.float32) / 255.0
    arr = (arr - _MEAN) / _STD
    return arr.transpose(2, 0, 1)


def list_images(images_dir: str | Path) -> list[Path]:
    root = Path(images_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    files = sorted(
        (p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )
    if not files:
        raise FileNotFoundError(f"{root} contains no image files")
    return files


def _load_all(files: list[Path], spec: BackboneSpec) -> np.ndarray:
    batch, failures = [], []
    for p in files:
        try:
            batch.append(preprocess(p, spec))
        except Exception as exc:  # noqa: BLE001 - every failure is reported
            failures.append(f"{p.name}: {exc}")
    if failures:
        # partial output with id gaps is worse than no output
        raise RuntimeError(
            f"{len(failures)} of {len(files)} images unreadable: " + "; ".join(failures)
        )
    return np.stack(batch)


def _embed_dir(
    images_dir: str | Path, spec: BackboneSpec, pool: str, batch_size: int
) -> tuple[list[Path], np.ndarray, np.ndarray]:
    if pool not in ("class", "mean"):
        raise ValueError(f"unknown pooling {pool!r}, expected 'class' or 'mean'")
    files = list_images(images_dir)
    pixels = _load_all(files, spec)
    backbone = Backbone(spec)
    cls_rows, mean_rows = [], []
    for start in range(0, len(pixels), batch_size):
        cls, patches = backbone.run(pixels[start:start + batch_size])
        cls_rows.append(cls)
        mean_rows.append(patches.mean(axis=1))
    cls_all = np.concatenate(cls_rows)
    mean_all = np.concatenate(mean_rows)
    vectors = cls_all if pool == "class" else mean_all
    if vectors.shape[1] != spec.dim:
        raise ValueError(
            f"declared dim {spec.dim} does not match emitted dim {vectors.shape[1]}"
        )
    return files, vectors.astype(np.float32), mean_all


def _spec_doc(spec: BackboneSpec) -> dict:
    return {
        "model": spec.model,
        "resolution": spec.resolution,
        "patch_size": spec.patch_size,
        "dim": spec.dim,
        "depth": spec.depth,
        "heads": spec.heads,
        "preprocessing": spec.preprocessing,
    }


def extract_global(
    images_dir: str | Path,
    spec: BackboneSpec,
    out_path: str | Path,
    pool: str = "class",
    batch_size: int = 16,
) -> Path:
    """Embed every image in a directory into one .vmem store."""
    files, vectors, _ = _embed_dir(images_dir, spec, pool, batch_size)
    out = Path(out_path)
    formats.write_vmem(out, vectors)
    formats.write_manifest(
        out,
        {
            "dim": int(vectors.shape[1]),
            "count": int(vectors.shape[0]),
            "class_names": None,
            "source": str(images_dir),
            "seed": spec.seed,
            "files": [p.name for p in files],
            "pool": pool,
            "backbone": _spec_doc(spec),
        },
    )
    return out


def extract_patches(
    image_path: str | Path,
    spec: BackboneSpec,
    out_path: str | Path,
    image_id: int = 0,
    _backbone: Backbone | None = None,
) -> Path:
    """Embed one image's patch tokens into a (grid x grid x dim) .vgrd."""
    image_path = Path(image_path)
    try:
        pixels = preprocess(image_path, spec)[None]
    except Exception as exc:  # noqa: BLE001
        raise RuntimeError(f"1 of 1 images unreadable: {image_path.name}: {exc}") from exc
    backbone = _backbone if _backbone is not None else Backbone(spec)
    _, patches = backbone.run(pixels)
    grid = spec.grid
    cube = patches[0].reshape(grid, grid, -1)
    if cube.shape[2] != spec.dim:
        raise ValueError(f"declared dim {spec.dim} does not match emitted dim {cube.shape[2]}")
    out = Path(out_path)
    formats.write_vgrd(out, cube, image_id)
    formats.write_manifest(
        out,
        {
            "dim": int(cube.shape[2]),
            "rows": grid,
            "cols": grid,
            "image_id": image_id,
            "source": str(image_path),
            "seed": spec.seed,
            "backbone": _spec_doc(spec),
        },
    )
    return out


def extract_patches_dir(
    images_dir: str | Path, spec: BackboneSpec, out_dir: str | Path
) -> list[Path]:
    """One .vgrd per image in the directory; image_id = sorted-name index."""
    files = list_images(images_dir)
    _load_all(files, spec)  # fail up front, before any file is written
    out_root = Path(out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    backbone = Backbone(spec)
    written = []
    for i, p in enumerate(files):
        written.append(
            extract_patches(p, spec, out_root / (p.stem + ".vgrd"), i, _backbone=backbone)
        )
    formats.write_manifest(
        out_root / "grids",
        {
            "count": len(written),
            "files": [w.name for w in written],
            "source": str(images_dir),
            "seed": spec.seed,
            "backbone": _spec_doc(spec),
        },
    )
    return written
