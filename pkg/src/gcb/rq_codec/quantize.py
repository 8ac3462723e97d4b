"""Residual vector quantization over a stack of codebooks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import _accel
from ..data_model import GCBError
from .kmeans import kmeans


class CodebookError(GCBError, ValueError):
    pass


@dataclass
class Codebooks:
    """One (K_l x d) codeword matrix per quantization level."""

    levels: list[np.ndarray]

    def __post_init__(self):
        if not self.levels:
            raise CodebookError("at least one codebook level is required")
        self.levels = [np.ascontiguousarray(b) for b in self.levels]
        d = self.levels[0].shape[1]
        for lvl, book in enumerate(self.levels):
            if book.ndim != 2 or book.shape[0] < 1 or book.shape[1] != d:
                raise CodebookError(f"level {lvl} has shape {book.shape}, expected (K>=1, {d})")
            if not np.isfinite(book).all():
                raise CodebookError(f"level {lvl} has non-finite codewords")

    @property
    def dim(self) -> int:
        return self.levels[0].shape[1]

    @property
    def sizes(self) -> list[int]:
        return [b.shape[0] for b in self.levels]

    def __len__(self) -> int:
        return len(self.levels)


@dataclass
class QuantizationResult:
    codes: np.ndarray  # (N, L) int64
    selected: np.ndarray  # (N, L, d)
    residuals: np.ndarray  # (N, L, d); residuals[:, l] is the input to level l
    zhat: np.ndarray  # (N, d)

    @property
    def final_residual(self) -> np.ndarray:
        return self.residuals[:, 0] - self.zhat


def quantize_batch(z: np.ndarray, books: Codebooks | Sequence[np.ndarray]) -> QuantizationResult:
    """Quantize every row of ``z`` level by level against the residual so far.

    The residual entering level l is ``z - (q_1 + ... + q_{l-1})`` with the
    partial sum accumulated left to right, and ``zhat`` is that same sum over
    all levels.
    """
    levels = books.levels if isinstance(books, Codebooks) else list(books)
    z = np.ascontiguousarray(np.atleast_2d(z))
    n, d = z.shape
    if levels[0].shape[1] != d:
        raise CodebookError(f"codebook dim {levels[0].shape[1]} != input dim {d}")
    L = len(levels)
    codes = np.empty((n, L), dtype=np.int64)
    selected = np.empty((n, L, d), dtype=z.dtype)
    residuals = np.empty((n, L, d), dtype=z.dtype)
    partial = np.zeros_like(z)
    for lvl, book in enumerate(levels):
        r = z - partial if lvl else z.copy()
        idx, _ = _accel.nearest(r, book)
        q = book.astype(z.dtype, copy=False)[idx]
        residuals[:, lvl] = r
        codes[:, lvl] = idx
        selected[:, lvl] = q
        partial = partial + q if lvl else q.copy()
    return QuantizationResult(codes, selected, residuals, partial)


def quantize(z: np.ndarray, books: Codebooks) -> QuantizationResult:
    """Single-vector convenience wrapper; fields keep a leading batch axis of 1."""
    return quantize_batch(np.asarray(z)[None, :], books)


def init_codebooks(
    encoded: np.ndarray,
    level_sizes: Sequence[int],
    seed: int = 0,
    max_iters: int = 100,
    n_init: int = 1,
) -> Codebooks:
    """k-means on level-1 inputs, then on each level's residuals in turn."""
    if len(level_sizes) == 0:
        raise CodebookError("level_sizes must be non-empty")
    if any(int(k) < 1 for k in level_sizes):
        raise CodebookError(f"level sizes must be >= 1, got {list(level_sizes)}")
    encoded = np.ascontiguousarray(encoded, dtype=np.float64)
    books: list[np.ndarray] = []
    residual = encoded.copy()
    for lvl, K in enumerate(level_sizes):
        res = kmeans(residual, int(K), max_iters=max_iters, seed=seed + lvl, n_init=n_init)
        books.append(res.centroids)
        residual = encoded - quantize_batch(encoded, books).zhat
    return Codebooks(books)


def utilization(codes: np.ndarray, sizes: Sequence[int]) -> list[int]:
    """Number of distinct codewords used at each level."""
    return [int(len(np.unique(codes[:, lvl]))) for lvl in range(len(sizes))]
