"""Mutation of the visual memory and exact per-sample privacy auditing.

Learning and unlearning are literal set operations on the record list:
removing a record provably erases its influence because classification
reads nothing but the memory. A training record is *non-private* when
deleting it flips the predicted label of at least one test query; the
audit computes that flag exactly, never approximately.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatchError, InvariantError, UnlabeledError
from .knn import DEFAULT_K, classify, evaluate_classification, knn_search, vote
from .store import UNLABELED, EmbeddingRecord, EmbeddingStore, make_store

#: Reserved label returned when classifying against an empty memory.
#: Distinct from all class labels and from the unlabeled sentinel, so
#: leave-one-out stays well-defined for singleton memories.
EMPTY_PREDICTION = -2


@dataclass(frozen=True)
class MemoryHandle:
    """Snapshot of the memory plus a generation counter.

    Mutations return a fresh handle (copy-on-write at the interface), so
    audits and classifications can keep using older snapshots.
    """

    store: EmbeddingStore
    generation: int = 0


def new_memory(store: EmbeddingStore) -> MemoryHandle:
    return MemoryHandle(store=store, generation=0)


def remove_records(memory: MemoryHandle, ids: Iterable[int]) -> MemoryHandle:
    """Drop the given records; unknown ids abort with no partial removal."""
    ids = sorted(set(int(i) for i in ids))
    store = memory.store
    if ids:
        idx = store.index_of(ids)
        keep = np.ones(len(store), dtype=bool)
        keep[idx] = False
    else:
        keep = np.ones(len(store), dtype=bool)
    new_store = make_store(
        store.ids[keep],
        store.vectors[keep],
        store.labels[keep],
        normalized=store.normalized,
        class_names=store.class_names,
    )
    return MemoryHandle(store=new_store, generation=memory.generation + 1)


def add_records(memory: MemoryHandle, records: Iterable[EmbeddingRecord]) -> MemoryHandle:
    """Union the memory with new records; duplicate ids are refused."""
    recs = list(records)
    store = memory.store
    if not recs:
        return MemoryHandle(store=store, generation=memory.generation + 1)
    new_ids = [int(r.id) for r in recs]
    if len(set(new_ids)) != len(new_ids):
        raise InvariantError("duplicate ids within the added batch")
    existing = set(store.ids.tolist())
    dup = sorted(set(new_ids) & existing)
    if dup:
        raise InvariantError(f"ids already present in memory: {dup}")
    new_vecs = np.zeros((len(recs), store.dim), dtype=np.float32)
    for i, r in enumerate(recs):
        v = np.asarray(r.vector, dtype=np.float32).ravel()
        if v.shape[0] != store.dim:
            raise DimensionMismatchError(
                f"record {r.id}: dim {v.shape[0]} != memory dim {store.dim}"
            )
        new_vecs[i] = v
    new_store = make_store(
        np.concatenate([store.ids, np.asarray(new_ids, dtype=np.uint64)]),
        np.concatenate([store.vectors, new_vecs]),
        np.concatenate([store.labels, np.asarray([r.label for r in recs], dtype=np.int64)]),
        normalized=store.normalized and _all_unit(new_vecs),
        class_names=store.class_names,
    )
    return MemoryHandle(store=new_store, generation=memory.generation + 1)


def _all_unit(vectors: np.ndarray) -> bool:
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
    return bool(np.all(np.abs(norms - 1.0) <= 1e-5))


@dataclass(frozen=True)
class PrivacyAuditReport:
    """Per-record non-private flags and the overall non-private fraction."""

    k: int
    non_private_ids: frozenset[int]
    fraction_non_private: float
    affected: dict[int, tuple[int, ...]]  # record id -> flipped query indices
    n_records: int
    n_queries: int

    def to_json(self) -> str:
        doc = {
            "k": self.k,
            "fraction_non_private": self.fraction_non_private,
            "non_private_ids": sorted(self.non_private_ids),
            "affected": {str(i): list(q) for i, q in sorted(self.affected.items())},
            "n_records": self.n_records,
            "n_queries": self.n_queries,
        }
        return json.dumps(doc, sort_keys=True, indent=2)


def _predict_or_null(store: EmbeddingStore, query: np.ndarray, k: int) -> int:
    if len(store) == 0:
        return EMPTY_PREDICTION
    return classify(store, query, k).label


def _check_audit_inputs(
    store: EmbeddingStore, queries: Sequence[np.ndarray] | np.ndarray
) -> list[np.ndarray]:
    queries = [np.asarray(q, dtype=np.float64) for q in queries]
    if len(store) == 0:
        raise InvariantError("audit of an empty memory")
    if not queries:
        raise InvariantError("audit needs at least one query")
    if (store.labels == UNLABELED).any():
        raise UnlabeledError("audit requires a fully labeled memory")
    return queries


def audit_privacy_naive(
    memory: MemoryHandle,
    queries: Sequence[np.ndarray] | np.ndarray,
    k: int = DEFAULT_K,
) -> PrivacyAuditReport:
    """Ground-truth leave-one-out audit.

    Literally rebuilds the memory without each record and reclassifies
    every query: O(N*M) classifications. Slow by design; it is the
    oracle the fast path is checked against.
    """
    store = memory.store
    queries = _check_audit_inputs(store, queries)
    baseline = [_predict_or_null(store, q, k) for q in queries]
    affected: dict[int, tuple[int, ...]] = {}
    for rid in store.ids.tolist():
        reduced = remove_records(memory, [rid]).store
        flipped = tuple(
            qi for qi, q in enumerate(queries)
            if _predict_or_null(reduced, q, k) != baseline[qi]
        )
        if flipped:
            affected[int(rid)] = flipped
    non_private = frozenset(affected)
    return PrivacyAuditReport(
        k=k,
        non_private_ids=non_private,
        fraction_non_private=len(non_private) / len(store),
        affected=affected,
        n_records=len(store),
        n_queries=len(queries),
    )


def audit_privacy_fast(
    memory: MemoryHandle,
    queries: Sequence[np.ndarray] | np.ndarray,
    k: int = DEFAULT_K,
    threads: int = 1,
) -> PrivacyAuditReport:
    """Exact audit in one scan per query.

    A record can only flip query q if it sits in q's top-k: removing
    anything else leaves the retrieved list untouched. So per query we
    fetch the top-(k+1) once; deleting neighbor x yields exactly the old
    ordered list minus x plus the rank-(k+1) entry, and the vote is
    recomputed on that list with the same tie-break. Produces a report
    identical to audit_privacy_naive.
    """
    store = memory.store
    queries = _check_audit_inputs(store, queries)
    n = len(store)
    k_eff = min(k, n)

    def flips_for_query(q: np.ndarray) -> list[int]:
        extended = knn_search(store, q, min(k + 1, n))
        ext_labels = store.labels_of(extended.ids)
        base_label, _, _ = vote(ext_labels[:k_eff])
        flipped_by: list[int] = []
        for pos in range(k_eff):
            if n == 1:
                new_label = EMPTY_PREDICTION
            else:
                reduced = np.delete(ext_labels, pos)
                new_label, _, _ = vote(reduced)
            if new_label != base_label:
                flipped_by.append(int(extended.ids[pos]))
        return flipped_by

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_query = list(pool.map(flips_for_query, queries))
    else:
        per_query = [flips_for_query(q) for q in queries]

    affected: dict[int, list[int]] = {}
    for qi, flippers in enumerate(per_query):
        for rid in flippers:
            affected.setdefault(rid, []).append(qi)
    affected_t = {rid: tuple(qs) for rid, qs in affected.items()}
    non_private = frozenset(affected_t)
    return PrivacyAuditReport(
        k=k,
        non_private_ids=non_private,
        fraction_non_private=len(non_private) / n,
        affected=affected_t,
        n_records=n,
        n_queries=len(queries),
    )


@dataclass(frozen=True)
class CurvePoint:
    memory: int
    accuracy: float
    fraction_non_private: float


def privacy_accuracy_curve(
    memories: Sequence[MemoryHandle],
    queries: EmbeddingStore,
    k: int = DEFAULT_K,
) -> list[CurvePoint]:
    """Per-memory (accuracy, non-private fraction) pairs for plotting."""
    points = []
    for i, memory in enumerate(memories):
        report = evaluate_classification(memory.store, queries, k)
        audit = audit_privacy_fast(memory, list(queries.vectors), k)
        points.append(CurvePoint(i, report.accuracy, audit.fraction_non_private))
    return points


def curve_to_csv(points: Sequence[CurvePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["memory", "accuracy", "fraction_non_private"])
    for p in points:
        w.writerow([p.memory, repr(p.accuracy), repr(p.fraction_non_private)])
    return buf.getvalue()
