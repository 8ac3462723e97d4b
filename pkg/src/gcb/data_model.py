"""Domain types shared across the pipeline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Sequence


class GCBError(Exception):
    """Base class for all pipeline errors."""


class HistoryError(GCBError, ValueError):
    pass


class EmptyHistory(HistoryError):
    pass


class NonMonotonicTimestamps(HistoryError):
    pass


class ItemOutOfRange(HistoryError):
    pass


@dataclass(frozen=True)
class UserHistory:
    """Time-ordered interactions of one user. Item ids are dense, 1-based."""

    user: Hashable
    items: tuple[int, ...]
    timestamps: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(int(i) for i in self.items))
        ts = tuple(int(t) for t in self.timestamps) if self.timestamps else tuple(range(len(self.items)))
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class FutureTarget:
    items: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(int(i) for i in self.items))

    @property
    def k(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class RankedStepList:
    """Ranked candidates for one future step (1-based ``step``)."""

    step: int
    candidates: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        cands = tuple(int(c) for c in self.candidates)
        if len(set(cands)) != len(cands):
            raise ValueError(f"duplicate candidates at step {self.step}: {cands}")
        if self.step < 1:
            raise ValueError("step is 1-based")
        object.__setattr__(self, "candidates", cands)

    def rank_of(self, item: int) -> int | None:
        try:
            return self.candidates.index(item) + 1
        except ValueError:
            return None


def validate_history(h: UserHistory, catalog_size: int) -> None:
    """Raise if ``h`` violates the history invariants; return None when valid."""
    if len(h.items) == 0:
        raise EmptyHistory(f"user {h.user!r} has an empty history")
    if len(h.timestamps) != len(h.items):
        raise HistoryError(f"user {h.user!r}: {len(h.items)} items but {len(h.timestamps)} timestamps")
    for a, b in zip(h.timestamps, h.timestamps[1:]):
        if b < a:
            raise NonMonotonicTimestamps(f"user {h.user!r}: timestamp {b} after {a}")
    for i in h.items:
        if not 1 <= i <= catalog_size:
            raise ItemOutOfRange(f"user {h.user!r}: item {i} outside 1..{catalog_size}")


def check_ranked(lists: Sequence[RankedStepList], K: int) -> None:
    for rl in lists:
        if len(rl.candidates) > K:
            raise ValueError(f"step {rl.step} has {len(rl.candidates)} > {K} candidates")
