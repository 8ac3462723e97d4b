"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``GCB_DISABLE_NUMBA=1`` before import to force the numpy path. Both paths
accumulate squared distances in the same sequential order over the feature
axis, so they agree bit-for-bit on argmin decisions.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("GCB_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("numba disabled by GCB_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy path

def _sq_dists_np(points: np.ndarray, book: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - book[None, :, :]
    sq = diff * diff
    acc = sq[:, :, 0].copy()
    for j in range(1, sq.shape[2]):
        acc += sq[:, :, j]
    return acc


def _nearest_np(points: np.ndarray, book: np.ndarray):
    d = _sq_dists_np(points, book)
    idx = np.argmin(d, axis=1)  # first minimum = lowest index on ties
    return idx.astype(np.int64), d[np.arange(len(points)), idx]


def _cluster_sums_np(points: np.ndarray, assign: np.ndarray, k: int):
    sums = np.zeros((k, points.shape[1]), dtype=points.dtype)
    np.add.at(sums, assign, points)
    counts = np.bincount(assign, minlength=k).astype(np.int64)
    return sums, counts


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _sq_dists_nb(points, book):
        n, d = points.shape
        k = book.shape[0]
        out = np.empty((n, k), dtype=points.dtype)
        for i in range(n):
            for c in range(k):
                diff = points[i, 0] - book[c, 0]
                acc = diff * diff
                for j in range(1, d):
                    diff = points[i, j] - book[c, j]
                    acc += diff * diff
                out[i, c] = acc
        return out

    @njit(cache=True)
    def _nearest_nb(points, book):
        n, d = points.shape
        k = book.shape[0]
        idx = np.empty(n, dtype=np.int64)
        best = np.empty(n, dtype=points.dtype)
        for i in range(n):
            bi = 0
            bd = np.inf
            for c in range(k):
                diff = points[i, 0] - book[c, 0]
                acc = diff * diff
                for j in range(1, d):
                    diff = points[i, j] - book[c, j]
                    acc += diff * diff
                if acc < bd:
                    bd = acc
                    bi = c
            idx[i] = bi
            best[i] = bd
        return idx, best

    @njit(cache=True)
    def _cluster_sums_nb(points, assign, k):
        n, d = points.shape
        sums = np.zeros((k, d), dtype=points.dtype)
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            c = assign[i]
            counts[c] += 1
            for j in range(d):
                sums[c, j] += points[i, j]
        return sums, counts


def _hartigan_np(points, centroids, assign, max_passes):
    k = len(centroids)
    sums, counts = _cluster_sums_np(points, assign, k)
    cents = centroids.copy()
    nz = counts > 0
    cents[nz] = sums[nz] / counts[nz, None]
    moves = 0
    for _ in range(max_passes):
        moved = False
        for i in range(len(points)):
            src = assign[i]
            if counts[src] <= 1:
                continue
            d = _sq_dists_np(points[i:i + 1], cents)[0]
            remove_gain = counts[src] / (counts[src] - 1.0) * d[src]
            add_cost = counts / (counts + 1.0) * d
            add_cost[src] = np.inf
            dst = int(np.argmin(add_cost))
            if add_cost[dst] < remove_gain * (1.0 - 1e-12):
                sums[src] -= points[i]
                counts[src] -= 1
                cents[src] = sums[src] / counts[src]
                sums[dst] += points[i]
                counts[dst] += 1
                cents[dst] = sums[dst] / counts[dst]
                assign[i] = dst
                moved = True
                moves += 1
        if not moved:
            break
    return cents, assign, moves


if HAVE_NUMBA:

    @njit(cache=True)
    def _hartigan_nb(points, centroids, assign, max_passes):
        n, d = points.shape
        k = centroids.shape[0]
        sums, counts = _cluster_sums_nb(points, assign, k)
        cents = centroids.copy()
        for c in range(k):
            if counts[c] > 0:
                for j in range(d):
                    cents[c, j] = sums[c, j] / counts[c]
        moves = 0
        for _ in range(max_passes):
            moved = False
            for i in range(n):
                src = assign[i]
                if counts[src] <= 1:
                    continue
                best = np.inf
                dst = -1
                remove_gain = 0.0
                for c in range(k):
                    diff = points[i, 0] - cents[c, 0]
                    acc = diff * diff
                    for j in range(1, d):
                        diff = points[i, j] - cents[c, j]
                        acc += diff * diff
                    if c == src:
                        remove_gain = counts[c] / (counts[c] - 1.0) * acc
                    else:
                        cost = counts[c] / (counts[c] + 1.0) * acc
                        if cost < best:
                            best = cost
                            dst = c
                if dst >= 0 and best < remove_gain * (1.0 - 1e-12):
                    counts[src] -= 1
                    counts[dst] += 1
                    for j in range(d):
                        sums[src, j] -= points[i, j]
                        sums[dst, j] += points[i, j]
                        cents[src, j] = sums[src, j] / counts[src]
                        cents[dst, j] = sums[dst, j] / counts[dst]
                    assign[i] = dst
                    moved = True
                    moves += 1
            if not moved:
                break
        return cents, assign, moves


def hartigan(points, centroids, assign, max_passes: int = 50, backend: str | None = None):
    """Single-point transfer refinement: move a point whenever that lowers the SSE.

    Returns refreshed centroids, the updated assignment and the number of moves.
    """
    points = _as2d(points)
    centroids = np.array(centroids, dtype=points.dtype, copy=True)
    assign = np.array(assign, dtype=np.int64, copy=True)
    if (backend or BACKEND) == "numba" and HAVE_NUMBA:
        return _hartigan_nb(points, centroids, assign, max_passes)
    return _hartigan_np(points, centroids, assign, max_passes)


def _as2d(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {a.shape}")
    return a


def sq_dists(points: np.ndarray, book: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Squared Euclidean distances, shape (N, K)."""
    points, book = _as2d(points), _as2d(book)
    book = book.astype(points.dtype, copy=False)
    if (backend or BACKEND) == "numba" and HAVE_NUMBA:
        return _sq_dists_nb(points, book)
    return _sq_dists_np(points, book)


def nearest(points: np.ndarray, book: np.ndarray, backend: str | None = None):
    """Index and squared distance of the closest row of ``book`` for every point.

    Ties go to the lowest codeword index.
    """
    points, book = _as2d(points), _as2d(book)
    book = book.astype(points.dtype, copy=False)
    if (backend or BACKEND) == "numba" and HAVE_NUMBA:
        return _nearest_nb(points, book)
    return _nearest_np(points, book)


def cluster_sums(points: np.ndarray, assign: np.ndarray, k: int, backend: str | None = None):
    points = _as2d(points)
    assign = np.ascontiguousarray(assign, dtype=np.int64)
    if (backend or BACKEND) == "numba" and HAVE_NUMBA:
        return _cluster_sums_nb(points, assign, k)
    return _cluster_sums_np(points, assign, k)
