"""PCA feature analysis of patch grids and patch-level segmentation.

Four segmentation mechanisms over a PatchGrid:

- explained-variance (R^2) scoring of PCA features against a label mask,
- in-context segmentation from a single prompt image + mask,
- KNN segmentation against a labeled patch memory,
- unsupervised K-Means segmentation.

Masks travel as 8-bit single-channel PNGs (pixel value = label index,
255 = ignore).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionMismatchError, InvariantError
from .kmeans import kmeans
from .knn import DEFAULT_K, classify
from .store import EmbeddingStore, PatchGrid

#: Mask value meaning "excluded from scoring".
IGNORE = -1

_PNG_IGNORE = 255


@dataclass(frozen=True)
class LabelMask:
    """Grid of integer class indices with -1 for ignored cells."""

    labels: np.ndarray  # (rows, cols) int64

    def __post_init__(self) -> None:
        self.labels.flags.writeable = False

    @property
    def rows(self) -> int:
        return int(self.labels.shape[0])

    @property
    def cols(self) -> int:
        return int(self.labels.shape[1])


def make_mask(labels: np.ndarray) -> LabelMask:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 2:
        raise InvariantError(f"mask must be 2-D, got shape {labels.shape}")
    if (labels < IGNORE).any():
        raise InvariantError("mask labels must be >= -1")
    return LabelMask(labels=labels.copy())


def write_mask_png(mask: LabelMask, path: str | Path) -> None:
    if (mask.labels > 254).any():
        raise InvariantError("mask labels above 254 cannot be stored in 8-bit PNG")
    pixels = mask.labels.astype(np.int64).copy()
    pixels[pixels == IGNORE] = _PNG_IGNORE
    Image.fromarray(pixels.astype(np.uint8), mode="L").save(path)


def read_mask_png(path: str | Path) -> LabelMask:
    img = Image.open(path)
    if img.mode != "L":
        img = img.convert("L")
    pixels = np.asarray(img, dtype=np.int64)
    pixels = pixels.copy()
    pixels[pixels == _PNG_IGNORE] = IGNORE
    return make_mask(pixels)


def downsample_mask(mask: LabelMask, rows: int, cols: int, mode: str = "nearest") -> LabelMask:
    """Resample a pixel-level mask to a patch-grid resolution.

    "nearest" samples the label at each patch-cell center; "majority"
    takes the most frequent non-ignore label in the cell (ties to the
    smaller label, all-ignore cells stay ignore).
    """
    src = mask.labels
    if mode == "nearest":
        r_idx = ((np.arange(rows) + 0.5) * src.shape[0] / rows).astype(np.int64)
        c_idx = ((np.arange(cols) + 0.5) * src.shape[1] / cols).astype(np.int64)
        r_idx = np.minimum(r_idx, src.shape[0] - 1)
        c_idx = np.minimum(c_idx, src.shape[1] - 1)
        return make_mask(src[np.ix_(r_idx, c_idx)])
    if mode == "majority":
        out = np.full((rows, cols), IGNORE, dtype=np.int64)
        r_edges = np.linspace(0, src.shape[0], rows + 1).astype(np.int64)
        c_edges = np.linspace(0, src.shape[1], cols + 1).astype(np.int64)
        for r in range(rows):
            for c in range(cols):
                block = src[r_edges[r]:max(r_edges[r + 1], r_edges[r] + 1),
                            c_edges[c]:max(c_edges[c + 1], c_edges[c] + 1)]
                vals, counts = np.unique(block[block != IGNORE], return_counts=True)
                if vals.size:
                    out[r, c] = vals[counts.argmax()]  # unique() sorts, so ties -> smaller
        return make_mask(out)
    raise InvariantError(f"unknown downsampling mode {mode!r}")


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaModel:
    """Mean-centered principal axes with their explained variances."""

    mean: np.ndarray                # (d,) float64
    components: np.ndarray          # (c, d) float64, orthonormal rows
    explained_variance: np.ndarray  # (c,) float64, non-increasing

    @property
    def n_components(self) -> int:
        return int(self.components.shape[0])

    @property
    def dim(self) -> int:
        return int(self.components.shape[1])


def fit_pca(patches: np.ndarray, c: int) -> PcaModel:
    """Fit a c-component PCA to a set of d-vectors.

    SVD of the centered data (equivalent to eigendecomposition of the
    covariance, divisor n-1). Component signs are fixed so the largest
    absolute entry of each axis is positive, making fits reproducible.
    Fully degenerate input (all points identical) yields a zero-variance
    model whose projections are exactly zero.
    """
    x = np.asarray(patches, dtype=np.float64)
    if x.ndim != 2:
        raise InvariantError(f"patches must be 2-D, got shape {x.shape}")
    n, d = x.shape
    if c < 1 or c > d:
        raise InvariantError(f"component count {c} outside [1, {d}]")
    if n < c + 1:
        raise InvariantError(f"need at least {c + 1} patches to fit {c} components, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    variances = (s ** 2) / (n - 1)
    # deterministic sign: flip each axis so its largest-|.| coordinate is positive
    flip = np.sign(vt[np.arange(vt.shape[0]), np.abs(vt).argmax(axis=1)])
    flip[flip == 0] = 1.0
    vt = vt * flip[:, None]
    return PcaModel(mean=mean, components=vt[:c].copy(), explained_variance=variances[:c].copy())


def project(model: PcaModel, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.shape[-1] != model.dim:
        raise DimensionMismatchError(f"point dim {points.shape[-1]} != model dim {model.dim}")
    return (points - model.mean) @ model.components.T


def project_grid(model: PcaModel, grid: PatchGrid) -> np.ndarray:
    """Per-patch centered projection: rows x cols x c feature grid."""
    if grid.dim != model.dim:
        raise DimensionMismatchError(f"grid dim {grid.dim} != model dim {model.dim}")
    return project(model, grid.patches.astype(np.float64))


def pca_rgb(features: np.ndarray) -> np.ndarray:
    """Map the first 3 feature channels to a uint8 RGB visualization.

    Each channel is min-max scaled independently; constant channels map
    to mid-gray.
    """
    if features.ndim != 3:
        raise InvariantError("features must be rows x cols x c")
    rgb = np.zeros((features.shape[0], features.shape[1], 3), dtype=np.float64)
    for ch in range(min(3, features.shape[2])):
        f = features[:, :, ch]
        lo, hi = f.min(), f.max()
        rgb[:, :, ch] = 0.5 if hi == lo else (f - lo) / (hi - lo)
    return np.floor(rgb * 255.0 + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# R^2 of features against label masks


def r2_report(features: np.ndarray, mask: LabelMask) -> dict:
    """Least-squares explained-variance ratio of features vs labels.

    Labels over non-ignore cells become one-hot targets; an ordinary
    least-squares fit with intercept maps the c feature channels to each
    target. R^2 = 1 - SSE/SST pooled over all targets and cells. The
    design is solved by minimum-norm least squares, so rank-deficient
    (e.g. constant) feature channels degrade the score instead of
    crashing.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3:
        raise InvariantError("features must be rows x cols x c")
    if features.shape[:2] != mask.labels.shape:
        raise DimensionMismatchError(
            f"feature grid {features.shape[:2]} vs mask {mask.labels.shape}"
        )
    valid = mask.labels.ravel() != IGNORE
    y = mask.labels.ravel()[valid]
    classes = np.unique(y)
    if classes.size < 2:
        raise InvariantError("need at least 2 distinct labels among non-ignore cells")
    f = features.reshape(-1, features.shape[2])[valid]
    n = f.shape[0]

    design = np.concatenate([np.ones((n, 1)), f], axis=1)
    onehot = (y[:, None] == classes[None, :]).astype(np.float64)
    beta, *_ = np.linalg.lstsq(design, onehot, rcond=None)
    resid = onehot - design @ beta
    sse = (resid ** 2).sum(axis=0)
    sst = ((onehot - onehot.mean(axis=0)) ** 2).sum(axis=0)
    r2_raw = 1.0 - sse.sum() / sst.sum()
    per_class = {int(cl): float(1.0 - e / t) for cl, e, t in zip(classes, sse, sst)}
    return {
        "r2": float(min(1.0, max(0.0, r2_raw))),
        "r2_raw": float(r2_raw),
        "per_class": per_class,
        "c": int(features.shape[2]),
        "cells": int(n),
    }


def r2_score(features: np.ndarray, mask: LabelMask) -> float:
    """Pooled R^2 in [0, 1]; see r2_report for the raw value breakdown."""
    return r2_report(features, mask)["r2"]


def r2_report_json(features: np.ndarray, mask: LabelMask) -> str:
    doc = r2_report(features, mask)
    doc["per_class"] = {str(k): v for k, v in sorted(doc["per_class"].items())}
    return json.dumps(doc, sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# in-context / KNN / K-Means segmentation


def _normalized_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if (norms == 0.0).any():
        raise InvariantError(f"zero-norm {what} vectors")
    return x / norms


def in_context_prototype(
    prompt: PatchGrid, prompt_mask: LabelMask, average_first: bool = False
) -> np.ndarray:
    """Pool the masked prompt patches into one prototype direction.

    Default normalizes each patch before averaging; `average_first`
    gives the average-then-normalize variant kept for comparison.
    """
    if prompt_mask.labels.shape != (prompt.rows, prompt.cols):
        raise DimensionMismatchError("prompt mask shape differs from prompt grid")
    pos = prompt_mask.labels > 0
    if not pos.any():
        raise InvariantError("prompt mask has no positive cells")
    patches = prompt.patches.astype(np.float64)[pos]
    if average_first:
        proto = patches.mean(axis=0)
    else:
        proto = _normalized_rows(patches, "prompt patch").mean(axis=0)
    norm = np.linalg.norm(proto)
    if norm == 0.0:
        raise InvariantError("masked prompt patches cancel to a zero prototype")
    return proto / norm


def in_context_similarity(
    prompt: PatchGrid, prompt_mask: LabelMask, query: PatchGrid
) -> dict[str, np.ndarray]:
    """Cosine maps of the query against both prototype variants."""
    if prompt.dim != query.dim:
        raise DimensionMismatchError(f"prompt dim {prompt.dim} != query dim {query.dim}")
    q = _normalized_rows(query.patches.astype(np.float64), "query patch")
    return {
        "normalized_mean": q @ in_context_prototype(prompt, prompt_mask),
        "mean_normalized": q @ in_context_prototype(prompt, prompt_mask, average_first=True),
    }


def in_context_segment(
    prompt: PatchGrid,
    prompt_mask: LabelMask,
    query: PatchGrid,
    threshold: float,
) -> LabelMask:
    """Mark every query patch whose cosine to the prompt prototype
    reaches the threshold."""
    sims = in_context_similarity(prompt, prompt_mask, query)["normalized_mean"]
    return make_mask((sims >= threshold).astype(np.int64))


def knn_segment(
    query: PatchGrid,
    patch_memory: EmbeddingStore,
    k: int = DEFAULT_K,
) -> LabelMask:
    """Per-patch majority-vote classification against a patch memory."""
    if query.dim != patch_memory.dim:
        raise DimensionMismatchError(
            f"grid dim {query.dim} != memory dim {patch_memory.dim}"
        )
    flat = query.patches.reshape(-1, query.dim)
    labels = np.array(
        [classify(patch_memory, p, k).label for p in flat], dtype=np.int64
    )
    return make_mask(labels.reshape(query.rows, query.cols))


def kmeans_segment(query: PatchGrid, K: int, seed: int, max_iters: int = 100) -> LabelMask:
    """Unsupervised hard-label segmentation: K-Means over patch vectors."""
    n = query.rows * query.cols
    if K > n:
        raise InvariantError(f"K={K} exceeds patch count {n}")
    result = kmeans(query.patches.reshape(n, query.dim), K, seed, max_iters=max_iters)
    return make_mask(result.assignments.reshape(query.rows, query.cols))
