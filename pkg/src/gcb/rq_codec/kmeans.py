"""Lloyd's k-means with k-means++ seeding."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .. import _accel
from ..data_model import GCBError

logger = logging.getLogger(__name__)


class DegenerateInputWarning(UserWarning):
    """Fewer distinct points than clusters; some centroids will coincide."""


class KMeansError(GCBError, ValueError):
    pass


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    sse: float
    sse_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def kmeans_plus_plus(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = np.empty((K, points.shape[1]), dtype=points.dtype)
    centers[0] = points[rng.integers(n)]
    closest = _accel.sq_dists(points, centers[:1])[:, 0]
    for c in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[c] = points[idx]
        closest = np.minimum(closest, _accel.sq_dists(points, centers[c:c + 1])[:, 0])
    return centers


def _reseed_empty(points, centroids, assign, dist, counts):
    """Move each empty centroid onto the point currently farthest from its own centroid."""
    taken = np.zeros(len(points), dtype=bool)
    for c in np.flatnonzero(counts == 0):
        masked = np.where(taken, -np.inf, dist)
        far = int(np.argmax(masked))
        taken[far] = True
        centroids[c] = points[far]
        dist[far] = 0.0
        assign[far] = c


def lloyd(points: np.ndarray, init: np.ndarray, max_iters: int = 100) -> KMeansResult:
    centroids = np.array(init, dtype=points.dtype, copy=True)
    K = len(centroids)
    assign, dist = _accel.nearest(points, centroids)
    history = [float(dist.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        sums, counts = _accel.cluster_sums(points, assign, K)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        if not nonempty.all():
            # distances to the refreshed centroids, before reseeding
            dist = _accel.sq_dists(points, centroids)[np.arange(len(points)), assign]
            _reseed_empty(points, centroids, assign, dist, counts)
        new_assign, dist = _accel.nearest(points, centroids)
        history.append(float(dist.sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    else:
        logger.debug("k-means hit max_iters=%d", max_iters)
    return KMeansResult(centroids, assign, history[-1], history, it)


def _point_sse(points, centroids, assign) -> float:
    return float(_accel.sq_dists(points, centroids)[np.arange(len(points)), assign].sum())


def refine(points: np.ndarray, res: KMeansResult, max_iters: int = 100, max_rounds: int = 10) -> KMeansResult:
    """Alternate single-point transfers and Lloyd until neither improves the SSE."""
    history = list(res.sse_history)
    n_iter = res.n_iter
    for _ in range(max_rounds):
        centroids, assign, moves = _accel.hartigan(points, res.centroids, res.assignments)
        if moves == 0:
            break
        history.append(_point_sse(points, centroids, assign))
        res = lloyd(points, centroids, max_iters)
        history.extend(res.sse_history)
        n_iter += res.n_iter
    return KMeansResult(res.centroids, res.assignments, res.sse, history, n_iter)


def kmeans(
    points: np.ndarray,
    K: int,
    max_iters: int = 100,
    seed: int = 0,
    n_init: int = 1,
    transfer_refine: bool = True,
) -> KMeansResult:
    """Cluster ``points`` (N x d) into ``K`` groups; the lowest-SSE restart wins.

    Each restart is k-means++ seeding followed by Lloyd iterations. With
    ``transfer_refine`` the Lloyd fixed point is further polished by
    single-point transfers, which escape some poor local optima.
    """
    points = np.ascontiguousarray(points, dtype=np.float64 if points.dtype != np.float32 else np.float32)
    if points.ndim != 2 or len(points) < 1:
        raise KMeansError(f"need a non-empty N x d matrix, got shape {points.shape}")
    if K < 1:
        raise KMeansError(f"K must be >= 1, got {K}")
    if not np.isfinite(points).all():
        raise KMeansError("points contain non-finite values")
    n_distinct = len(np.unique(points, axis=0))
    if n_distinct < K:
        warnings.warn(
            f"{n_distinct} distinct points for K={K}; duplicate centroids will be produced",
            DegenerateInputWarning,
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        res = lloyd(points, kmeans_plus_plus(points, K, rng), max_iters)
        if transfer_refine:
            res = refine(points, res, max_iters)
        if best is None or res.sse < best.sse:
            best = res
    return best
