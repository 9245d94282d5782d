"""Command line: embed a directory of images into memory-engine files."""
from __future__ import annotations

import argparse
import sys

from .extract import BackboneSpec, extract_global, extract_patches_dir


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embed-adapter",
        description="Extract ViT embeddings from images into .vmem/.vgrd files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", description="Embed every image in a directory.")
    p.add_argument("--model", required=True,
                   help="weights path (.pth/.pt native, .onnx interchange) or an "
                        "identifier; identifiers run a seeded random init")
    p.add_argument("--images", required=True, help="directory of image files")
    p.add_argument("--out", required=True,
                   help="output .vmem path, or a directory with --patches")
    p.add_argument("--patches", action="store_true",
                   help="write one patch grid (.vgrd) per image instead of a store")
    p.add_argument("--pool", choices=("class", "mean"), default="class",
                   help="global embedding: class token (default) or mean of patches")
    p.add_argument("--resolution", type=int, default=224)
    p.add_argument("--patch-size", type=int, default=16)
    p.add_argument("--dim", type=int, default=384)
    p.add_argument("--depth", type=int, default=12)
    p.add_argument("--heads", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch-size", type=int, default=16)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        spec = BackboneSpec(
            model=args.model,
            resolution=args.resolution,
            patch_size=args.patch_size,
            dim=args.dim,
            depth=args.depth,
            heads=args.heads,
            seed=args.seed,
        )
        if args.patches:
            written = extract_patches_dir(args.images, spec, args.out)
            print(f"wrote {len(written)} patch grids to {args.out}")
        else:
            out = extract_global(args.images, spec, args.out,
                                 pool=args.pool, batch_size=args.batch_size)
            print(f"wrote {out}")
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"embed-adapter: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
