"""Image compositing: K-Means RGB masks, KML mixing, and Mixup.

The KML process clusters one source image's pixels in RGB space and
uses the resulting mask to splice two further images together; Mixup
interpolates whole images. Everything is computed in float and stays
reproducible from (config, seed).
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DimensionMismatchError, InvariantError
from ..kmeans import kmeans
from .textures import TEXTURE_KINDS, ProcImage, gen_texture, make_image

#: Rec. 709 luma weights, used to rank mask clusters by brightness.
_LUMA = np.array([0.2126, 0.7152, 0.0722])

DEFAULT_K = 2
DEFAULT_ALPHA = 1.0


def derive_seed(*parts: int) -> int:
    """Collapse a (master seed, index...) path into one 64-bit seed.

    Hash-based, so per-sample streams are independent and insensitive
    to generation order.
    """
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True, eq=False)
class ClusterMask:
    """Per-pixel cluster ids from K-Means in RGB space."""

    assignment: np.ndarray  # (height, width) int64 in [0, k)
    centroids: np.ndarray   # (k, 3) float64
    inertia: float
    reduced: bool  # true when requested K exceeded the distinct-color count

    def __post_init__(self) -> None:
        self.assignment.flags.writeable = False
        self.centroids.flags.writeable = False

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])

    @property
    def height(self) -> int:
        return int(self.assignment.shape[0])

    @property
    def width(self) -> int:
        return int(self.assignment.shape[1])


def kmeans_rgb(image: ProcImage, K: int, seed: int, max_iters: int = 50) -> ClusterMask:
    """Cluster an image's pixels into K RGB groups.

    If the image holds fewer than K distinct colors the run proceeds
    with K reduced to that count and the result is flagged `reduced`.
    """
    pixels = image.data.reshape(-1, 3)
    n = pixels.shape[0]
    if K < 1:
        raise InvariantError(f"K must be >= 1, got {K}")
    if K > n:
        raise InvariantError(f"K={K} exceeds pixel count {n}")
    distinct = np.unique(pixels, axis=0).shape[0]
    effective_k = min(K, distinct)
    result = kmeans(pixels, effective_k, seed, max_iters=max_iters)
    return ClusterMask(
        assignment=result.assignments.reshape(image.height, image.width).astype(np.int64),
        centroids=result.centroids.copy(),
        inertia=result.inertia,
        reduced=effective_k < K,
    )


def _check_same_size(*images: ProcImage) -> None:
    sizes = {(img.height, img.width) for img in images}
    if len(sizes) > 1:
        raise DimensionMismatchError(f"image sizes differ: {sorted(sizes)}")


def cluster_sources(mask: ClusterMask, assignment: str, seed: int) -> list[str]:
    """Decide which source image each mask cluster pulls from.

    "luminance" ranks clusters by centroid brightness and alternates
    s2/s3 along the ranking (even rank -> s2); "random" flips a seeded
    coin per cluster.
    """
    if assignment == "luminance":
        order = np.argsort(_LUMA @ mask.centroids.T, kind="stable")
        rank = np.empty(mask.k, dtype=np.int64)
        rank[order] = np.arange(mask.k)
        return ["s2" if r % 2 == 0 else "s3" for r in rank]
    if assignment == "random":
        rng = np.random.default_rng(seed)
        return ["s2" if rng.integers(2) == 0 else "s3" for _ in range(mask.k)]
    raise InvariantError(f"unknown cluster assignment rule {assignment!r}")


def kml_compose(
    s1: ProcImage,
    s2: ProcImage,
    s3: ProcImage,
    K: int = DEFAULT_K,
    seed: int = 0,
    assignment: str = "luminance",
    max_iters: int = 50,
) -> ProcImage:
    """Splice s2 and s3 through a K-Means mask of s1.

    Every output pixel is copied verbatim from s2 or s3 — the mask only
    chooses which.
    """
    _check_same_size(s1, s2, s3)
    mask = kmeans_rgb(s1, K, derive_seed(seed, 0), max_iters=max_iters)
    sources = cluster_sources(mask, assignment, derive_seed(seed, 1))
    use_s2 = np.asarray([src == "s2" for src in sources])[mask.assignment]
    data = np.where(use_s2[:, :, None], s2.data, s3.data)
    provenance = {
        "pipeline": "kml-compose",
        "seed": int(seed),
        "params": {"K": int(K), "assignment": assignment, "max_iters": int(max_iters)},
        "sources": [s1.provenance, s2.provenance, s3.provenance],
        "mask": {"k": mask.k, "reduced": mask.reduced, "cluster_sources": sources},
    }
    return make_image(data, provenance)


# ---------------------------------------------------------------------------
# Mixup


@dataclass(frozen=True)
class MixParams:
    """Beta-distributed mixing weight with its sampling record."""

    alpha: float
    lam: float
    seed: int

    def __post_init__(self) -> None:
        if self.alpha <= 0.0:
            raise InvariantError(f"alpha must be > 0, got {self.alpha}")
        if not 0.0 <= self.lam <= 1.0:
            raise InvariantError(f"lambda must be in [0,1], got {self.lam}")

    @classmethod
    def sample(cls, alpha: float, seed: int) -> "MixParams":
        if alpha <= 0.0:
            raise InvariantError(f"alpha must be > 0, got {alpha}")
        lam = float(np.random.default_rng(seed).beta(alpha, alpha))
        return cls(alpha=float(alpha), lam=lam, seed=int(seed))


def mixup(a: ProcImage, b: ProcImage, params: MixParams) -> ProcImage:
    """out = lam*a + (1-lam)*b, pixelwise in float."""
    _check_same_size(a, b)
    lam = params.lam
    if lam == 1.0:
        data = a.data.copy()
    elif lam == 0.0:
        data = b.data.copy()
    else:
        data = np.clip(lam * a.data + (1.0 - lam) * b.data, 0.0, 1.0)
    provenance = {
        "pipeline": "mixup",
        "seed": params.seed,
        "params": {"alpha": params.alpha, "lam": params.lam},
        "sources": [a.provenance, b.provenance],
    }
    return make_image(data, provenance)


# ---------------------------------------------------------------------------
# configured sampling pipelines


def _resolve_source(slot: str, config: dict, seed: int, rng: np.random.Generator) -> ProcImage:
    """Build one of the three KML inputs from its config entry.

    A slot may pin a generator kind (with params), point at a PNG file,
    or stay unset, in which case a kind is drawn from config["kinds"].
    """
    spec = config.get(slot)
    kinds = list(config.get("kinds", TEXTURE_KINDS))
    size = {"width": config.get("width", 256), "height": config.get("height", 256)}
    chosen = kinds[int(rng.integers(len(kinds)))]  # always drawn, keeps streams aligned
    if spec is None:
        return gen_texture(chosen, size, seed)
    if "file" in spec:
        from .dataset import load_png  # local import to avoid a cycle

        return load_png(spec["file"])
    params = {**size, **spec.get("params", {})}
    return gen_texture(spec["kind"], params, seed)


def kml_sample(config: dict | None, seed: int) -> ProcImage:
    """One Shaders-KML draw: three sources, one mask, one splice."""
    config = dict(config or {})
    rng = np.random.default_rng(derive_seed(seed, 0))
    s1 = _resolve_source("s1", config, derive_seed(seed, 1), rng)
    s2 = _resolve_source("s2", config, derive_seed(seed, 2), rng)
    s3 = _resolve_source("s3", config, derive_seed(seed, 3), rng)
    out = kml_compose(
        s1,
        s2,
        s3,
        K=int(config.get("K", DEFAULT_K)),
        seed=derive_seed(seed, 4),
        assignment=config.get("assignment", "luminance"),
    )
    return make_image(
        out.data,
        {
            "pipeline": "kml",
            "seed": int(seed),
            "params": config,
            "detail": out.provenance,
        },
    )


def kml_mixup_sample(config: dict | None, seed: int) -> ProcImage:
    """Mixup of two independent KML draws, lambda ~ Beta(alpha, alpha).

    config["lam"] pins the weight instead (e.g. 0.5 emulates the
    alpha -> infinity limit).
    """
    config = dict(config or {})
    a = kml_sample(config, derive_seed(seed, 10))
    b = kml_sample(config, derive_seed(seed, 11))
    alpha = float(config.get("alpha", DEFAULT_ALPHA))
    if "lam" in config:
        params = MixParams(alpha=alpha, lam=float(config["lam"]), seed=derive_seed(seed, 12))
    else:
        params = MixParams.sample(alpha, derive_seed(seed, 12))
    out = mixup(a, b, params)
    return make_image(
        out.data,
        {
            "pipeline": "kml-mixup",
            "seed": int(seed),
            "params": config,
            "lam": params.lam,
            "detail": out.provenance,
        },
    )
