"""Embedding extraction adapter: turn images into memory-engine files."""
from .extract import (
    Backbone,
    BackboneSpec,
    extract_global,
    extract_patches,
    extract_patches_dir,
    list_images,
    preprocess,
)
from .formats import write_manifest, write_vgrd, write_vmem
from .vit import VisionTransformer, normalize_state_dict

__all__ = [
    "Backbone",
    "BackboneSpec",
    "VisionTransformer",
    "extract_global",
    "extract_patches",
    "extract_patches_dir",
    "list_images",
    "normalize_state_dict",
    "preprocess",
    "write_manifest",
    "write_vgrd",
    "write_vmem",
]

__version__ = "0.1.0"
