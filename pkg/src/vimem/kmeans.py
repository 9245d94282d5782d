"""Lloyd's K-Means with k-means++ seeding, shared by the image compositor
and the patch-grid segmenter.

Deterministic given the seed; exposes the full per-iteration inertia
history so monotonicity is checkable. Empty clusters are re-seeded from
the point farthest from its assigned centroid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvariantError


@dataclass(frozen=True)
class KMeansResult:
    assignments: np.ndarray      # (n,) int cluster ids in [0, k)
    centroids: np.ndarray        # (k, dim) float64
    inertia_history: list[float]  # inertia at each assignment step
    n_iter: int
    converged: bool

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x - c||^2 expanded; clip the cancellation noise so exact matches are 0
    d = (
        np.einsum("ij,ij->i", points, points)[:, None]
        - 2.0 * points @ centroids.T
        + np.einsum("ij,ij->i", centroids, centroids)[None, :]
    )
    return np.maximum(d, 0.0)


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest = _sq_dists(points, centroids[:1]).ravel()
    for j in range(1, k):
        total = closest.sum()
        if total == 0.0:
            # every remaining point coincides with a chosen centroid;
            # spread deterministically over the first points
            centroids[j] = points[j % n]
            continue
        pick = int(rng.choice(n, p=closest / total))
        centroids[j] = points[pick]
        closest = np.minimum(closest, _sq_dists(points, centroids[j : j + 1]).ravel())
    return centroids


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int,
    max_iters: int = 100,
    init_centroids: np.ndarray | None = None,
) -> KMeansResult:
    """Cluster points into k groups.

    At termination every point is assigned to its nearest centroid
    (squared Euclidean, argmin ties to the lowest cluster id). Inertia is
    recorded after every assignment step and never increases.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise InvariantError(f"points must be 2-D, got shape {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise InvariantError(f"k must be >= 1, got {k}")
    if k > n:
        raise InvariantError(f"k={k} exceeds point count {n}")

    rng = np.random.default_rng(seed)
    if init_centroids is not None:
        centroids = np.asarray(init_centroids, dtype=np.float64).copy()
        if centroids.shape != (k, points.shape[1]):
            raise InvariantError(f"init_centroids shape {centroids.shape} != ({k}, dim)")
    else:
        centroids = _plusplus_init(points, k, rng)

    history: list[float] = []
    assignments = np.zeros(n, dtype=np.int64)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        dists = _sq_dists(points, centroids)
        new_assignments = dists.argmin(axis=1)
        history.append(float(dists[np.arange(n), new_assignments].sum()))
        if it > 1 and (new_assignments == assignments).all():
            converged = True
            break
        assignments = new_assignments
        if it == max_iters:
            # keep assignments consistent with the centroids they were
            # computed against when the iteration budget runs out
            break

        assigned_dist = dists[np.arange(n), assignments].copy()
        for j in range(k):
            members = assignments == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
            else:
                # re-seed the dead centroid at the point farthest from its
                # current assignment; that point defects next iteration
                worst = int(assigned_dist.argmax())
                centroids[j] = points[worst]
                assigned_dist[worst] = 0.0

    return KMeansResult(
        assignments=assignments,
        centroids=centroids,
        inertia_history=history,
        n_iter=it,
        converged=converged,
    )
