"""Seed-reproducible procedural image synthesis."""
from .compose import (
    DEFAULT_ALPHA,
    DEFAULT_K,
    ClusterMask,
    MixParams,
    cluster_sources,
    derive_seed,
    kmeans_rgb,
    kml_compose,
    kml_mixup_sample,
    kml_sample,
    mixup,
)
from .dataset import (
    MANIFEST_NAME,
    generate_dataset,
    generate_sample,
    load_png,
    quantize,
    read_manifest,
    regenerate_sample,
    save_png,
    to_png_bytes,
    write_dataset,
)
from .gestalt import GESTALT_PRINCIPLES, element_pixels, gen_gestalt
from .textures import DEFAULT_SIZE, TEXTURE_KINDS, ProcImage, gen_texture, make_image

__all__ = [
    "DEFAULT_ALPHA",
    "DEFAULT_K",
    "DEFAULT_SIZE",
    "GESTALT_PRINCIPLES",
    "MANIFEST_NAME",
    "TEXTURE_KINDS",
    "ClusterMask",
    "MixParams",
    "ProcImage",
    "cluster_sources",
    "derive_seed",
    "element_pixels",
    "gen_gestalt",
    "gen_texture",
    "generate_dataset",
    "generate_sample",
    "kmeans_rgb",
    "kml_compose",
    "kml_mixup_sample",
    "kml_sample",
    "load_png",
    "make_image",
    "mixup",
    "quantize",
    "read_manifest",
    "regenerate_sample",
    "save_png",
    "to_png_bytes",
    "write_dataset",
]
