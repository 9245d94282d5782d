"""Dataset writing and bit-exact regeneration.

Samples land as 8-bit PNGs plus a JSON-lines manifest; each row holds
the (pipeline, params, seed) triple that regenerates its image
exactly. Quantization rounds half away from zero and happens only
here — all compositing upstream stays in float.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from PIL import Image

from ..errors import InvariantError
from .compose import derive_seed, kml_mixup_sample, kml_sample
from .gestalt import gen_gestalt
from .textures import TEXTURE_KINDS, ProcImage, gen_texture, make_image

MANIFEST_NAME = "manifest.jsonl"


def quantize(data: np.ndarray) -> np.ndarray:
    """[0,1] float -> uint8, 0.5 ulps rounding up (0.5 -> 128)."""
    return np.floor(np.asarray(data, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


def to_png_bytes(image: ProcImage) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(quantize(image.data), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(image: ProcImage, path: str | Path) -> None:
    Image.fromarray(quantize(image.data), mode="RGB").save(path, format="PNG")


def load_png(path: str | Path) -> ProcImage:
    """Ingest an externally rendered image as a pipeline source."""
    img = Image.open(path)
    if img.mode != "RGB":
        img = img.convert("RGB")
    data = np.asarray(img, dtype=np.float64) / 255.0
    return make_image(data, {"pipeline": "file", "params": {"path": str(path)}, "seed": 0})


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)!r}")


def write_dataset(
    samples: Iterable[ProcImage],
    out_dir: str | Path,
    manifest_name: str = MANIFEST_NAME,
    extras: Iterable[dict] | None = None,
) -> None:
    """Write one PNG + one manifest row per sample.

    Rows carry {"index", "seed", "pipeline", "params", "file"} pulled
    from each image's provenance; `extras` merges extra fields (e.g. a
    mask path) into the matching row.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    extra_iter: Iterator[dict] = iter(extras) if extras is not None else iter(())
    with open(out_dir / manifest_name, "w", encoding="utf-8") as manifest:
        for index, image in enumerate(samples):
            prov = image.provenance
            for key in ("pipeline", "params", "seed"):
                if key not in prov:
                    raise InvariantError(f"sample {index} provenance lacks {key!r}")
            name = f"{index:06d}.png"
            save_png(image, out_dir / name)
            row = {
                "index": index,
                "seed": prov["seed"],
                "pipeline": prov["pipeline"],
                "params": prov["params"],
                "file": name,
            }
            row.update(next(extra_iter, {}))
            manifest.write(json.dumps(row, sort_keys=True, default=_jsonable) + "\n")


def generate_sample(pipeline: str, params: dict | None, seed: int) -> ProcImage:
    """Single dispatch point shared by dataset generation and
    manifest-driven regeneration."""
    if pipeline in TEXTURE_KINDS:
        return gen_texture(pipeline, params, seed)
    if pipeline == "kml":
        return kml_sample(params, seed)
    if pipeline == "kml-mixup":
        return kml_mixup_sample(params, seed)
    if pipeline == "gestalt":
        params = dict(params or {})
        principle = params.pop("principle", None)
        if principle is None:
            raise InvariantError("gestalt pipeline needs params['principle']")
        return gen_gestalt(principle, params, seed)[0]
    if pipeline == "file":
        return load_png((params or {})["path"])
    raise InvariantError(f"unknown pipeline {pipeline!r}")


def generate_dataset(
    pipeline: str,
    params: dict | None,
    count: int,
    master_seed: int,
    out_dir: str | Path,
) -> None:
    """Generate `count` independent samples; sample i's seed is derived
    from (master_seed, i), so parallel or partial regeneration agrees
    with the full run."""
    if count < 1:
        raise InvariantError(f"count must be >= 1, got {count}")

    def stream() -> Iterator[ProcImage]:
        for i in range(count):
            yield generate_sample(pipeline, params, derive_seed(master_seed, i))

    write_dataset(stream(), out_dir)


def read_manifest(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def regenerate_sample(row: dict) -> ProcImage:
    """Rebuild one sample from its manifest row (bit-identical)."""
    return generate_sample(row["pipeline"], row.get("params"), row["seed"])
