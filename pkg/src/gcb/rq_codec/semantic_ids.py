"""Semantic-ID assignment with a collision position, and cluster analysis."""

from __future__ import annotations

import csv
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import IO, Mapping

import numpy as np

from ..data_model import GCBError

UNKNOWN_CATEGORY = "(unknown)"


class NoCategories(GCBError, ValueError):
    pass


@dataclass
class CodeMap:
    """Bijective item <-> Semantic-ID table. ``codes[i - 1]`` is the ID of item i."""

    codes: np.ndarray  # (M, L_c) int64, codes are 0-based per position
    vocab_sizes: list[int]

    def __post_init__(self):
        self.codes = np.ascontiguousarray(self.codes, dtype=np.int64)
        if self.codes.ndim != 2:
            raise ValueError("codes must be (M, L_c)")
        if len(self.vocab_sizes) != self.codes.shape[1]:
            raise ValueError("one vocab size per code position is required")
        if len(self.codes) and ((self.codes < 0) | (self.codes >= np.asarray(self.vocab_sizes))).any():
            raise ValueError("code outside its position's range")
        self.code_to_item: dict[tuple[int, ...], int] = {
            tuple(int(c) for c in row): i + 1 for i, row in enumerate(self.codes)
        }
        if len(self.code_to_item) != len(self.codes):
            raise ValueError("Semantic-IDs are not unique")

    @property
    def num_items(self) -> int:
        return len(self.codes)

    @property
    def code_len(self) -> int:
        return self.codes.shape[1]

    def semantic_id(self, item: int) -> tuple[int, ...]:
        if not 1 <= item <= self.num_items:
            raise KeyError(item)
        return tuple(int(c) for c in self.codes[item - 1])

    def lookup(self, code: tuple[int, ...]) -> int | None:
        return self.code_to_item.get(tuple(code))

    def to_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", *(f"code_{p + 1}" for p in range(self.code_len))])
        for i, row in enumerate(self.codes, start=1):
            w.writerow([i, *row.tolist()])

    @classmethod
    def from_csv(cls, fh: IO[str], vocab_sizes: list[int] | None = None) -> "CodeMap":
        rows = list(csv.reader(fh))
        body = sorted((int(r[0]), [int(c) for c in r[1:]]) for r in rows[1:] if r)
        if [i for i, _ in body] != list(range(1, len(body) + 1)):
            raise ValueError("CodeMap CSV item ids must be exactly 1..M")
        codes = np.array([c for _, c in body], dtype=np.int64).reshape(len(body), len(rows[0]) - 1)
        if vocab_sizes is None:
            vocab_sizes = (codes.max(axis=0) + 1).tolist() if len(codes) else [1] * codes.shape[1]
        return cls(codes, list(vocab_sizes))


def with_collision_position(level_codes: np.ndarray, level_sizes: list[int]) -> CodeMap:
    """Append a disambiguating position: 0, 1, 2, ... in ascending item order per shared prefix."""
    level_codes = np.asarray(level_codes, dtype=np.int64)
    seen: Counter = Counter()
    extra = np.empty(len(level_codes), dtype=np.int64)
    for i, row in enumerate(level_codes):
        key = tuple(row.tolist())
        extra[i] = seen[key]
        seen[key] += 1
    width = max(seen.values(), default=1)
    codes = np.concatenate([level_codes, extra[:, None]], axis=1)
    return CodeMap(codes, [int(k) for k in level_sizes] + [int(width)])


def assign_semantic_ids(level_codes: np.ndarray, level_sizes: list[int], collision_position: bool = True) -> CodeMap:
    """Build the CodeMap from per-item quantization codes (row i-1 for item i).

    Without the collision position the raw codes must already be unique.
    """
    if collision_position:
        return with_collision_position(level_codes, level_sizes)
    return CodeMap(level_codes, [int(k) for k in level_sizes])


@dataclass
class ClusterReport:
    rows: list[tuple[int, str, str, int]]  # (l1_code, l2_code or "ALL", category, count)

    def to_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["l1_code", "l2_code_or_ALL", "category", "count"])
        w.writerows(self.rows)

    def cluster_sizes(self, l2: str = "ALL") -> dict[tuple[int, str], int]:
        out: dict[tuple[int, str], int] = defaultdict(int)
        for l1, sub, _, n in self.rows:
            if l2 == "ALL" and sub == "ALL" or l2 != "ALL" and sub != "ALL":
                out[(l1, sub)] += n
        return dict(out)


def _histogram(items, categories) -> list[tuple[str, int]]:
    counts = Counter(categories.get(i, UNKNOWN_CATEGORY) for i in items)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def analyze_hierarchy(codemap: CodeMap, categories: Mapping[int, str]) -> ClusterReport:
    """Category histograms per level-1 cluster and per level-2 sub-cluster.

    Sub-clusters are listed largest first; uncategorized items count under
    ``(unknown)``.
    """
    if not any(1 <= i <= codemap.num_items for i in categories):
        raise NoCategories("no category metadata for any item in the code map")
    l1_groups: dict[int, list[int]] = defaultdict(list)
    l2_groups: dict[int, dict[int, list[int]]] = defaultdict(lambda: defaultdict(list))
    has_l2 = codemap.code_len > 1
    for i, row in enumerate(codemap.codes, start=1):
        l1_groups[int(row[0])].append(i)
        if has_l2:
            l2_groups[int(row[0])][int(row[1])].append(i)

    rows: list[tuple[int, str, str, int]] = []
    for l1 in sorted(l1_groups):
        rows.extend((l1, "ALL", cat, n) for cat, n in _histogram(l1_groups[l1], categories))
        subs = sorted(l2_groups[l1].items(), key=lambda kv: (-len(kv[1]), kv[0]))
        for l2, members in subs:
            rows.extend((l1, str(l2), cat, n) for cat, n in _histogram(members, categories))
    return ClusterReport(rows)
