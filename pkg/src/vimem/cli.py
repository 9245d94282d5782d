"""Command-line surface.

Every command emits a JSON report carrying its full invocation (argv,
seed, version), so any result can be reproduced by re-running the
embedded argv. Binary outputs (stores, PNGs) land at the paths given
on the command line; the report records where.

Exit codes: 0 ok, 2 usage, 3 format error, 4 invariant violation,
5 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import FormatError, InvariantError, VimemError
from .governance import (
    audit_privacy_fast,
    audit_privacy_naive,
    new_memory,
    privacy_accuracy_curve,
    curve_to_csv,
    remove_records,
)
from .knn import (
    DEFAULT_K,
    classify,
    evaluate_classification,
    load_trials_jsonl,
    proportion_se,
    two_afc_alignment,
)
from .procgen import derive_seed, gen_gestalt, generate_dataset, write_dataset
from .procgen.dataset import MANIFEST_NAME, _jsonable
from .segmentation import (
    downsample_mask,
    fit_pca,
    in_context_segment,
    in_context_similarity,
    kmeans_segment,
    knn_segment,
    make_mask,
    pca_rgb,
    project_grid,
    r2_report,
    read_mask_png,
    write_mask_png,
)
from .store import (
    l2_normalize,
    make_store,
    read_grid,
    read_store,
    write_manifest,
    write_store,
)

_EXIT_FORMAT = 3
_EXIT_INVARIANT = 4
_EXIT_IO = 5


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("VIMEM_THREADS", "1")))
    except ValueError:
        return 1


def _load_matrix(path: str) -> np.ndarray:
    arr = np.load(path)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise InvariantError(f"{path}: expected a vector matrix, got shape {arr.shape}")
    return np.asarray(arr, dtype=np.float64)


def _read_label_csv(path: str) -> tuple[list[int] | None, list[int]]:
    """Label CSV: either one label per row, or id,label rows. A single
    non-numeric header row is skipped."""
    ids: list[int] = []
    labels: list[int] = []
    two_col = None
    with open(path, newline="", encoding="utf-8") as fh:
        for row_no, row in enumerate(csv.reader(fh)):
            row = [c.strip() for c in row if c.strip() != ""]
            if not row:
                continue
            try:
                values = [int(c) for c in row]
            except ValueError:
                if row_no == 0:
                    continue  # header
                raise InvariantError(f"{path}:{row_no + 1}: non-integer label row {row!r}")
            if len(values) == 1:
                this_two = False
            elif len(values) == 2:
                this_two = True
            else:
                raise InvariantError(f"{path}:{row_no + 1}: expected 1 or 2 columns")
            if two_col is None:
                two_col = this_two
            elif two_col != this_two:
                raise InvariantError(f"{path}: mixed 1- and 2-column rows")
            if this_two:
                ids.append(values[0])
                labels.append(values[1])
            else:
                labels.append(values[0])
    return (ids if two_col else None), labels


def _grid_mask(mask_path: str, rows: int, cols: int, pool: str):
    mask = read_mask_png(mask_path)
    if (mask.rows, mask.cols) != (rows, cols):
        mask = downsample_mask(mask, rows, cols, mode=pool)
    return mask


# ---------------------------------------------------------------------------
# handlers (each returns the JSON report body)


def _cmd_build_memory(args) -> dict:
    vectors = _load_matrix(args.embeddings)
    csv_ids, labels = _read_label_csv(args.labels)
    if len(labels) != vectors.shape[0]:
        raise InvariantError(
            f"label count {len(labels)} does not match embedding row count {vectors.shape[0]}"
        )
    ids = csv_ids if csv_ids is not None else list(range(vectors.shape[0]))
    class_names = args.class_names.split(",") if args.class_names else None
    store = make_store(ids, vectors, labels, class_names=class_names)
    if args.normalize:
        store = l2_normalize(store)
    write_store(store, args.out)
    write_manifest(store, args.out, source=args.embeddings, seed=args.seed)
    return {
        "out": args.out,
        "count": len(store),
        "dim": store.dim,
        "normalized": store.normalized,
    }


def _cmd_classify(args) -> dict:
    store = read_store(args.memory)
    queries = _load_matrix(args.queries)
    predictions = []
    for qi in range(queries.shape[0]):
        pred = classify(store, queries[qi], args.k)
        predictions.append(
            {
                "query": qi,
                "label": pred.label,
                "margin": pred.margin,
                "votes": {str(l): c for l, c in sorted(pred.votes.items())},
                "neighbors": list(pred.neighbor_ids),
                "clamped": pred.clamped,
            }
        )
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["query", "label", "margin"])
        for p in predictions:
            w.writerow([p["query"], p["label"], p["margin"]])
        Path(args.csv).write_text(buf.getvalue(), encoding="utf-8")
    return {"k": args.k, "n_queries": len(predictions), "predictions": predictions}


def _cmd_evaluate(args) -> dict:
    store = read_store(args.memory)
    test = read_store(args.test)
    report = evaluate_classification(store, test, args.k)
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return json.loads(report.to_json())


def _cmd_2afc(args) -> dict:
    store = read_store(args.memory) if args.memory else None
    trials = load_trials_jsonl(args.trials, store=store, require_human=True)
    alignment = two_afc_alignment(trials)
    return {
        "n_trials": len(trials),
        "alignment": alignment,
        "se": proportion_se(alignment, len(trials)),
    }


def _cmd_audit(args) -> dict:
    memory = new_memory(read_store(args.memory))
    queries = list(_load_matrix(args.queries))
    if args.method in ("fast", "both"):
        fast = audit_privacy_fast(memory, queries, args.k, threads=args.threads)
    if args.method in ("naive", "both"):
        naive = audit_privacy_naive(memory, queries, args.k)
    if args.method == "fast":
        return json.loads(fast.to_json())
    if args.method == "naive":
        return json.loads(naive.to_json())
    agree = (
        fast.non_private_ids == naive.non_private_ids and fast.affected == naive.affected
    )
    return {
        "fast": json.loads(fast.to_json()),
        "naive": json.loads(naive.to_json()),
        "agree": agree,
    }


def _cmd_unlearn(args) -> dict:
    if Path(args.out).resolve() == Path(args.memory).resolve():
        raise InvariantError("unlearn writes a new store; --out must differ from --memory")
    ids = [int(tok) for tok in args.ids.split(",") if tok]
    if not ids:
        raise InvariantError("no record ids given")
    memory = new_memory(read_store(args.memory))
    after = remove_records(memory, ids)
    write_store(after.store, args.out)
    write_manifest(after.store, args.out, source=args.memory, seed=args.seed)
    return {
        "removed_ids": sorted(set(ids)),
        "before": len(memory.store),
        "after": len(after.store),
        "out": args.out,
    }


def _cmd_segment_pca(args) -> dict:
    grids = [read_grid(p) for p in args.grids]
    if args.masks and len(args.masks) != len(grids):
        raise InvariantError(f"{len(args.masks)} masks for {len(grids)} grids")
    if args.fit_scope == "dataset":
        stacked = np.concatenate([g.patches.reshape(-1, g.dim) for g in grids])
        shared_model = fit_pca(stacked, args.components)
    entries = []
    for gi, grid in enumerate(grids):
        model = (
            shared_model
            if args.fit_scope == "dataset"
            else fit_pca(grid.patches.reshape(-1, grid.dim), args.components)
        )
        features = project_grid(model, grid)
        entry: dict = {
            "path": args.grids[gi],
            "explained_variance": [float(v) for v in model.explained_variance],
        }
        if args.masks:
            mask = _grid_mask(args.masks[gi], grid.rows, grid.cols, args.pool)
            entry["r2"] = r2_report(features, mask)
        if args.viz_dir:
            viz_dir = Path(args.viz_dir)
            viz_dir.mkdir(parents=True, exist_ok=True)
            from PIL import Image

            out_png = viz_dir / (Path(args.grids[gi]).stem + "_pca.png")
            Image.fromarray(pca_rgb(features), mode="RGB").save(out_png)
            entry["viz"] = str(out_png)
        entries.append(entry)
    return {"components": args.components, "fit_scope": args.fit_scope, "grids": entries}


def _cmd_segment_incontext(args) -> dict:
    prompt = read_grid(args.prompt)
    query = read_grid(args.query)
    prompt_mask = _grid_mask(args.prompt_mask, prompt.rows, prompt.cols, args.pool)
    out_mask = in_context_segment(prompt, prompt_mask, query, args.threshold)
    write_mask_png(out_mask, args.out)
    body = {
        "threshold": args.threshold,
        "out": args.out,
        "positive_fraction": float((out_mask.labels == 1).mean()),
    }
    if args.sim_json:
        sims = in_context_similarity(prompt, prompt_mask, query)
        Path(args.sim_json).write_text(
            json.dumps(
                {name: arr.tolist() for name, arr in sorted(sims.items())},
                sort_keys=True,
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
        body["sim_json"] = args.sim_json
    return body


def _cmd_segment_knn(args) -> dict:
    memory = read_store(args.memory)
    query = read_grid(args.query)
    mask = knn_segment(query, memory, args.k)
    write_mask_png(mask, args.out)
    values, counts = np.unique(mask.labels, return_counts=True)
    return {
        "k": args.k,
        "out": args.out,
        "label_histogram": {str(int(v)): int(c) for v, c in zip(values, counts)},
    }


def _cmd_segment_kmeans(args) -> dict:
    query = read_grid(args.query)
    mask = kmeans_segment(query, args.clusters, args.seed)
    write_mask_png(mask, args.out)
    values, counts = np.unique(mask.labels, return_counts=True)
    return {
        "K": args.clusters,
        "out": args.out,
        "cluster_sizes": {str(int(v)): int(c) for v, c in zip(values, counts)},
    }


def _parse_params(args) -> dict:
    if args.params_file:
        return json.loads(Path(args.params_file).read_text(encoding="utf-8"))
    if args.params:
        return json.loads(args.params)
    return {}


def _cmd_gen(args) -> dict:
    params = _parse_params(args)
    generate_dataset(args.pipeline, params, args.count, args.seed, args.out)
    return {
        "pipeline": args.pipeline,
        "count": args.count,
        "out": args.out,
        "manifest": str(Path(args.out) / MANIFEST_NAME),
    }


def _cmd_gestalt(args) -> dict:
    params = _parse_params(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    extras: list[dict] = []

    def stream():
        for i in range(args.count):
            image, mask = gen_gestalt(args.principle, params, derive_seed(args.seed, i))
            mask_name = f"{i:06d}_mask.png"
            write_mask_png(mask, out_dir / mask_name)
            extras.append({"mask": mask_name})  # appended before the writer reads row i
            yield image

    write_dataset(stream(), out_dir, extras=extras)
    return {
        "principle": args.principle,
        "count": args.count,
        "out": args.out,
        "manifest": str(out_dir / MANIFEST_NAME),
    }


def _cmd_curve(args) -> dict:
    memories = [new_memory(read_store(p)) for p in args.memories]
    test = read_store(args.test)
    points = privacy_accuracy_curve(memories, test, args.k)
    if args.csv:
        Path(args.csv).write_text(curve_to_csv(points), encoding="utf-8")
    return {
        "k": args.k,
        "points": [
            {
                "memory": p.memory,
                "path": args.memories[p.memory],
                "accuracy": p.accuracy,
                "fraction_non_private": p.fraction_non_private,
            }
            for p in points
        ],
        "csv": args.csv,
    }


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help="internal parallelism (VIMEM_THREADS sets the default; results never depend on it)",
    )
    common.add_argument("--report", default=None, help="write the JSON report here instead of stdout")

    parser = argparse.ArgumentParser(prog="vimem", description=__doc__)
    parser.add_argument("--version", action="version", version=f"vimem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-memory", parents=[common], help="assemble a store from raw vectors")
    p.add_argument("--embeddings", required=True, help=".npy matrix, one row per record")
    p.add_argument("--labels", required=True, help="CSV: label per row, or id,label rows")
    p.add_argument("--out", required=True)
    p.add_argument("--class-names", default=None, help="comma-separated label names")
    p.add_argument("--normalize", action="store_true", help="L2-normalize vectors")
    p.set_defaults(handler=_cmd_build_memory)

    p = sub.add_parser("classify", parents=[common], help="label queries against a memory")
    p.add_argument("--memory", required=True)
    p.add_argument("--queries", required=True, help=".npy matrix of query vectors")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--csv", default=None, help="also write query,label,margin rows")
    p.set_defaults(handler=_cmd_classify)

    p = sub.add_parser("evaluate", parents=[common], help="top-1 accuracy on a labeled test store")
    p.add_argument("--memory", required=True)
    p.add_argument("--test", required=True, help="labeled store of test records")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--csv", default=None, help="also write the confusion table as CSV")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("2afc", parents=[common], help="cosine judge vs human 2AFC choices")
    p.add_argument("--trials", required=True, help="JSON-lines trial manifest")
    p.add_argument("--memory", default=None, help="store resolving integer trial references")
    p.set_defaults(handler=_cmd_2afc)

    p = sub.add_parser("audit", parents=[common], help="per-record privacy audit")
    p.add_argument("--memory", required=True)
    p.add_argument("--queries", required=True, help=".npy matrix of test queries")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--method", choices=("fast", "naive", "both"), default="fast")
    p.set_defaults(handler=_cmd_audit)

    p = sub.add_parser("unlearn", parents=[common], help="delete records into a new store file")
    p.add_argument("--memory", required=True)
    p.add_argument("--ids", required=True, help="comma-separated record ids")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_unlearn)

    p = sub.add_parser("segment-pca", parents=[common], help="PCA features, R² scores, visualizations")
    p.add_argument("--grids", required=True, nargs="+", help="patch grid files")
    p.add_argument("--components", type=int, default=16)
    p.add_argument("--masks", nargs="+", default=None, help="label mask PNGs, one per grid")
    p.add_argument("--viz-dir", default=None, help="write RGB visualizations here")
    p.add_argument("--fit-scope", choices=("per-image", "dataset"), default="per-image")
    p.add_argument("--pool", choices=("nearest", "majority"), default="nearest")
    p.set_defaults(handler=_cmd_segment_pca)

    p = sub.add_parser("segment-incontext", parents=[common], help="one-prompt prototype segmentation")
    p.add_argument("--prompt", required=True, help="prompt patch grid")
    p.add_argument("--prompt-mask", required=True, help="binary mask PNG over the prompt")
    p.add_argument("--query", required=True, help="query patch grid")
    p.add_argument("--threshold", type=float, required=True)
    p.add_argument("--out", required=True, help="output mask PNG")
    p.add_argument("--sim-json", default=None, help="write similarity maps here")
    p.add_argument("--pool", choices=("nearest", "majority"), default="nearest")
    p.set_defaults(handler=_cmd_segment_incontext)

    p = sub.add_parser("segment-knn", parents=[common], help="per-patch KNN labels")
    p.add_argument("--memory", required=True, help="labeled patch store")
    p.add_argument("--query", required=True, help="query patch grid")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--out", required=True, help="output mask PNG")
    p.set_defaults(handler=_cmd_segment_knn)

    p = sub.add_parser("segment-kmeans", parents=[common], help="unsupervised patch clustering")
    p.add_argument("--query", required=True, help="query patch grid")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--out", required=True, help="output mask PNG")
    p.set_defaults(handler=_cmd_segment_kmeans)

    p = sub.add_parser("gen", parents=[common], help="generate a procedural image dataset")
    p.add_argument(
        "--pipeline",
        required=True,
        choices=(
            "value-noise",
            "sine-grating",
            "voronoi",
            "gradient-blend",
            "kml",
            "kml-mixup",
        ),
    )
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--params", default=None, help="inline JSON generator config")
    p.add_argument("--params-file", default=None, help="JSON generator config file")
    p.set_defaults(handler=_cmd_gen)

    p = sub.add_parser("gestalt", parents=[common], help="grouping stimuli with ground-truth masks")
    p.add_argument(
        "--principle",
        required=True,
        choices=(
            "closure",
            "kanizsa",
            "connection",
            "continuity",
            "enclosure",
            "proximity",
            "similarity",
        ),
    )
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--params", default=None, help="inline JSON parameters")
    p.add_argument("--params-file", default=None, help="JSON parameter file")
    p.set_defaults(handler=_cmd_gestalt)

    p = sub.add_parser("curve", parents=[common], help="accuracy vs non-private fraction per memory")
    p.add_argument("--memories", required=True, nargs="+", help="store files, plotted in order")
    p.add_argument("--test", required=True, help="labeled store of test records")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--csv", default=None, help="write memory,accuracy,fraction_non_private rows")
    p.set_defaults(handler=_cmd_curve)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors (exit code 2)
        return int(exc.code or 0)
    try:
        body = args.handler(args)
    except FormatError as exc:
        print(f"vimem: format error: {exc}", file=sys.stderr)
        return _EXIT_FORMAT
    except (InvariantError, VimemError) as exc:
        print(f"vimem: invariant violation: {exc}", file=sys.stderr)
        return _EXIT_INVARIANT
    except OSError as exc:
        print(f"vimem: i/o error: {exc}", file=sys.stderr)
        return _EXIT_IO
    report = {
        "report": body,
        "run": {
            "command": args.command,
            "argv": argv,
            "seed": args.seed,
            "version": __version__,
            "created_at": datetime.now(timezone.utc).isoformat(),
        },
    }
    text = json.dumps(report, sort_keys=True, indent=2, default=_jsonable) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
