"""Exact cosine-similarity nearest-neighbor search and derived judgments.

Everything here is an exhaustive exact scan under one total order:
similarity descending, record id ascending. No approximation, ever; the
privacy audit in `governance` depends on this determinism.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    InvariantError,
    UnlabeledError,
    ZeroNormError,
)
from .store import UNLABELED, EmbeddingStore

#: Default neighbor count used by every surface that takes k.
DEFAULT_K = 10

#: z threshold for two-sided significance at the 5% level.
Z_CRITICAL_5PCT = 1.96


@dataclass(frozen=True)
class NeighborList:
    """Top-k retrieval result under the (similarity desc, id asc) order."""

    query_id: int
    ids: np.ndarray            # (m,) uint64
    similarities: np.ndarray   # (m,) float64

    @property
    def entries(self) -> list[tuple[int, float]]:
        return [(int(i), float(s)) for i, s in zip(self.ids, self.similarities)]

    def __len__(self) -> int:
        return int(self.ids.shape[0])


@dataclass(frozen=True)
class Prediction:
    """Majority-vote outcome over the k retrieved neighbors."""

    label: int
    votes: dict[int, int]
    margin: int
    neighbor_ids: tuple[int, ...]
    clamped: bool = False


@dataclass(frozen=True)
class TwoAfcTrial:
    """One reference/option0/option1 trio, optionally with a human answer."""

    reference: np.ndarray
    option0: np.ndarray
    option1: np.ndarray
    human_choice: int | None = None

    def __post_init__(self) -> None:
        shapes = {self.reference.shape, self.option0.shape, self.option1.shape}
        if len(shapes) != 1 or self.reference.ndim != 1:
            raise DimensionMismatchError(f"trial vectors disagree in shape: {shapes}")
        for name in ("reference", "option0", "option1"):
            if not np.isfinite(getattr(self, name)).all():
                raise InvariantError(f"trial {name} has non-finite components")
        if self.human_choice is not None and self.human_choice not in (0, 1):
            raise InvariantError(f"human_choice must be 0 or 1, got {self.human_choice}")


def _as_query(query: np.ndarray | Sequence[float], dim: int) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64).ravel()
    if q.shape[0] != dim:
        raise DimensionMismatchError(f"query dim {q.shape[0]} != store dim {dim}")
    if not np.isfinite(q).all():
        raise InvariantError("query has non-finite components")
    return q


def knn_search(
    store: EmbeddingStore,
    query: np.ndarray | Sequence[float],
    k: int,
    query_id: int = -1,
) -> NeighborList:
    """Exhaustive top-k cosine search over the store.

    Returns exactly the top min(k, n) records under the total order
    (cosine similarity descending, record id ascending). Dot products
    accumulate in float64 so the ordering is reproducible.
    """
    if len(store) == 0:
        raise InvariantError("knn_search on an empty store")
    if k < 1:
        raise InvariantError(f"k must be positive, got {k}")
    q = _as_query(query, store.dim)
    qn = math.sqrt(float(q @ q))
    if qn == 0.0:
        raise ZeroNormError("zero-norm query")
    norms = store.norms64
    zero = norms == 0.0
    if zero.any():
        raise ZeroNormError(f"zero-norm vectors for ids {store.ids[zero].tolist()}")
    sims = (store.vectors64 @ q) / (norms * qn)
    order = np.lexsort((store.ids, -sims))
    top = order[: min(k, len(store))]
    return NeighborList(
        query_id=query_id,
        ids=store.ids[top].copy(),
        similarities=sims[top].copy(),
    )


def vote(labels_in_rank_order: Sequence[int]) -> tuple[int, dict[int, int], int]:
    """Majority vote over labels listed best-rank first.

    Ties between labels with equal counts go to the label whose
    best-ranked occurrence comes earliest. Returns (label, votes, margin).
    """
    counts: dict[int, int] = {}
    first_rank: dict[int, int] = {}
    for rank, lab in enumerate(labels_in_rank_order):
        lab = int(lab)
        counts[lab] = counts.get(lab, 0) + 1
        first_rank.setdefault(lab, rank)
    best = max(counts.values())
    winner = min((lab for lab, c in counts.items() if c == best), key=first_rank.__getitem__)
    runner_up = max((c for lab, c in counts.items() if lab != winner), default=0)
    return winner, counts, best - runner_up


def classify(
    store: EmbeddingStore,
    query: np.ndarray | Sequence[float],
    k: int = DEFAULT_K,
) -> Prediction:
    """Majority-vote label of the k nearest neighbors.

    k larger than the store clamps to the store size (flagged on the
    prediction). Every retrieved neighbor must be labeled.
    """
    clamped = k > len(store)
    neighbors = knn_search(store, query, k)
    labels = store.labels_of(neighbors.ids)
    if (labels == UNLABELED).any():
        bad = neighbors.ids[labels == UNLABELED]
        raise UnlabeledError(f"unlabeled neighbors retrieved: {bad.tolist()}")
    winner, counts, margin = vote(labels)
    return Prediction(
        label=winner,
        votes=counts,
        margin=margin,
        neighbor_ids=tuple(int(i) for i in neighbors.ids),
        clamped=clamped,
    )


@dataclass(frozen=True)
class ClassificationReport:
    """Top-1 accuracy plus per-class breakdown and confusion counts."""

    accuracy: float
    per_class: dict[int, float]
    confusion: dict[int, dict[int, int]]
    n_queries: int
    k: int

    def to_json(self) -> str:
        doc = {
            "accuracy": self.accuracy,
            "per_class": {str(c): a for c, a in sorted(self.per_class.items())},
            "confusion": {
                str(t): {str(p): n for p, n in sorted(row.items())}
                for t, row in sorted(self.confusion.items())
            },
            "n_queries": self.n_queries,
            "k": self.k,
        }
        return json.dumps(doc, sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true_label", "pred_label", "count"])
        for t, row in sorted(self.confusion.items()):
            for p, n in sorted(row.items()):
                w.writerow([t, p, n])
        return buf.getvalue()


def evaluate_classification(
    store: EmbeddingStore,
    queries: EmbeddingStore,
    k: int = DEFAULT_K,
) -> ClassificationReport:
    """Classify every query record against the memory and score top-1."""
    if len(queries) == 0:
        raise InvariantError("no queries to evaluate")
    if queries.dim != store.dim:
        raise DimensionMismatchError(f"query dim {queries.dim} != store dim {store.dim}")
    if (queries.labels == UNLABELED).any():
        raise UnlabeledError("evaluation queries must all be labeled")
    if (
        store.class_names is not None
        and queries.class_names is not None
        and store.class_names != queries.class_names
    ):
        raise InvariantError("label spaces differ between memory and queries")

    confusion: dict[int, dict[int, int]] = {}
    correct = 0
    for i in range(len(queries)):
        truth = int(queries.labels[i])
        pred = classify(store, queries.vectors[i], k).label
        row = confusion.setdefault(truth, {})
        row[pred] = row.get(pred, 0) + 1
        if pred == truth:
            correct += 1
    per_class = {
        t: row.get(t, 0) / sum(row.values()) for t, row in confusion.items()
    }
    return ClassificationReport(
        accuracy=correct / len(queries),
        per_class=per_class,
        confusion=confusion,
        n_queries=len(queries),
        k=k,
    )


# ---------------------------------------------------------------------------
# 2AFC similarity judgment


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na = math.sqrt(float(a @ a))
    nb = math.sqrt(float(b @ b))
    if na == 0.0 or nb == 0.0:
        raise ZeroNormError("cosine of a zero-norm vector")
    return float(a @ b) / (na * nb)


def two_afc_judge(trial: TwoAfcTrial) -> int:
    """Pick the option with greater cosine similarity to the reference.

    Exact ties go to option 0 so the judgment is deterministic.
    """
    s0 = _cosine(trial.reference, trial.option0)
    s1 = _cosine(trial.reference, trial.option1)
    return 1 if s1 > s0 else 0


def two_afc_alignment(
    trials: Iterable[TwoAfcTrial],
    embed: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """Fraction of trials where the cosine judge matches the human choice.

    `embed` optionally maps each raw trial vector through an embedding
    function before judging (identity when omitted).
    """
    trials = list(trials)
    if not trials:
        raise InvariantError("no trials")
    matches = 0
    for t in trials:
        if t.human_choice is None:
            raise InvariantError("trial missing human_choice")
        if embed is not None:
            t = TwoAfcTrial(
                reference=np.asarray(embed(t.reference)),
                option0=np.asarray(embed(t.option0)),
                option1=np.asarray(embed(t.option1)),
                human_choice=t.human_choice,
            )
        if two_afc_judge(t) == t.human_choice:
            matches += 1
    return matches / len(trials)


def load_trials_jsonl(
    path: str,
    store: EmbeddingStore | None = None,
    require_human: bool = False,
) -> list[TwoAfcTrial]:
    """Read a JSON-lines 2AFC manifest.

    Each row holds `reference`, `option0`, `option1` and optionally
    `human_choice`. Vector fields are either integer record ids resolved
    against `store`, paths to .npy vector files, or inline float lists.
    """
    def resolve(value) -> np.ndarray:
        if isinstance(value, int):
            if store is None:
                raise InvariantError("trial references record ids but no store was given")
            return store.vectors[int(store.index_of([value])[0])].astype(np.float64)
        if isinstance(value, str):
            return np.load(value).astype(np.float64).ravel()
        return np.asarray(value, dtype=np.float64).ravel()

    trials = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            try:
                trial = TwoAfcTrial(
                    reference=resolve(row["reference"]),
                    option0=resolve(row["option0"]),
                    option1=resolve(row["option1"]),
                    human_choice=row.get("human_choice"),
                )
            except KeyError as exc:
                raise InvariantError(f"{path}:{line_no}: missing field {exc}") from exc
            if require_human and trial.human_choice is None:
                raise InvariantError(f"{path}:{line_no}: missing human_choice")
            trials.append(trial)
    return trials


# ---------------------------------------------------------------------------
# evaluation statistics


def proportion_se(p: float, n: int) -> float:
    """Standard error of a proportion: sqrt(p(1-p)/n)."""
    if not 0.0 <= p <= 1.0:
        raise InvariantError(f"proportion {p} outside [0, 1]")
    if n < 1:
        raise InvariantError(f"n must be >= 1, got {n}")
    return math.sqrt(p * (1.0 - p) / n)


def two_proportion_ztest(
    p1: float, n1: int, p2: float, n2: int
) -> tuple[float, bool]:
    """Pooled-variance two-proportion z-test.

    Returns (z, significant) with significance at |z| > 1.96 (two-sided
    5% level). Equal proportions give z = 0 exactly.
    """
    for p in (p1, p2):
        if not 0.0 <= p <= 1.0:
            raise InvariantError(f"proportion {p} outside [0, 1]")
    if n1 < 1 or n2 < 1:
        raise InvariantError("sample sizes must be >= 1")
    if p1 == p2:
        return 0.0, False
    pooled = (p1 * n1 + p2 * n2) / (n1 + n2)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    if se == 0.0:
        # pooled variance vanishes only when both proportions sit on the
        # same boundary, which the p1 == p2 branch already covered
        raise InvariantError("degenerate z-test: zero pooled variance")
    z = (p1 - p2) / se
    return z, abs(z) > Z_CRITICAL_5PCT
