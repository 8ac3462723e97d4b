"""Interaction-log parsing, user filtering and leave-k-out splitting."""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .data_model import FutureTarget, GCBError, UserHistory, validate_history

logger = logging.getLogger(__name__)

FIELD_ALIASES = {
    "reviewerID": "user",
    "user_id": "user",
    "asin": "item",
    "parent_asin": "item",
    "unixReviewTime": "ts",
    "timestamp": "ts",
}
SEGMENTS = ("train", "valid", "test")


class IngestError(GCBError, ValueError):
    pass


class MalformedRecord(IngestError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class MissingField(IngestError):
    def __init__(self, name: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"missing field {name!r}{where}")
        self.name = name
        self.line = line


class HistoryTooShort(IngestError):
    def __init__(self, user, n: int, need: int):
        super().__init__(f"user {user!r} has {n} interactions, needs >= {need}")
        self.user = user


@dataclass
class InteractionLog:
    histories: dict[str, UserHistory]
    item_keys: list[str]  # item_keys[i - 1] is the raw key of ItemId i
    categories: dict[int, str] = field(default_factory=dict)

    @property
    def catalog_size(self) -> int:
        return len(self.item_keys)

    @property
    def num_interactions(self) -> int:
        return sum(len(h) for h in self.histories.values())

    def validate(self) -> None:
        for h in self.histories.values():
            validate_history(h, self.catalog_size)
        seen = {i for h in self.histories.values() for i in h.items}
        if seen != set(range(1, self.catalog_size + 1)):
            raise IngestError("item ids are not dense over the retained histories")


@dataclass(frozen=True)
class SplitExample:
    user: str
    segment: str
    input_items: tuple[int, ...]
    target: FutureTarget

    def to_json(self) -> dict:
        return {
            "user": self.user,
            "segment": self.segment,
            "input": list(self.input_items),
            "target": list(self.target.items),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SplitExample":
        return cls(str(obj["user"]), obj["segment"], tuple(obj["input"]), FutureTarget(obj["target"]))


def _records_jsonl(lines: Iterable[str]) -> Iterator[tuple[int, dict]]:
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise MalformedRecord(lineno, "record is not an object")
        rec = {}
        for key, value in obj.items():
            rec.setdefault(FIELD_ALIASES.get(key, key), value)
        yield lineno, rec


def _records_tsv(lines: Iterable[str]) -> Iterator[tuple[int, dict]]:
    names = ("user", "item", "ts", "category")
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 3:
            raise MissingField(names[len(parts)], lineno)
        if len(parts) > 4:
            raise MalformedRecord(lineno, f"expected 3 or 4 columns, got {len(parts)}")
        yield lineno, dict(zip(names, parts))


def _text_lines(source) -> Iterable[str]:
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8")


def parse_interactions(source: IO | bytes | str, fmt: str = "jsonl") -> InteractionLog:
    """Parse a JSONL or TSV interaction stream into per-user histories.

    Histories are sorted by timestamp with file order breaking ties; item ids
    are assigned densely in first-seen file order.
    """
    if fmt not in ("jsonl", "tsv"):
        raise ValueError(f"unknown format {fmt!r}")
    records = _records_jsonl if fmt == "jsonl" else _records_tsv

    item_ids: dict[str, int] = {}
    categories: dict[int, str] = {}
    rows: dict[str, list[tuple[int, int, int]]] = {}
    for order, (lineno, rec) in enumerate(records(_text_lines(source))):
        for name in ("user", "item", "ts"):
            if rec.get(name) in (None, ""):
                raise MissingField(name, lineno)
        try:
            ts = int(rec["ts"])
        except (TypeError, ValueError):
            raise MalformedRecord(lineno, f"timestamp {rec['ts']!r} is not an integer") from None
        item_key = str(rec["item"])
        item = item_ids.setdefault(item_key, len(item_ids) + 1)
        cat = rec.get("category")
        if isinstance(cat, list):  # Amazon metadata stores a category path
            cat = cat[-1] if cat else None
        if cat not in (None, "") and item not in categories:
            categories[item] = str(cat)
        rows.setdefault(str(rec["user"]), []).append((ts, order, item))

    histories = {}
    for user, events in rows.items():
        events.sort()  # (ts, file order) -> stable on ties
        histories[user] = UserHistory(user, tuple(e[2] for e in events), tuple(e[0] for e in events))
    return InteractionLog(histories, list(item_ids), categories)


def min_history_length(k: int) -> int:
    return 3 * k + 1


def filter_users(log: InteractionLog, k: int) -> InteractionLog:
    """Drop users with fewer than 3k+1 interactions and re-densify item ids."""
    if k < 1:
        raise ValueError("horizon k must be >= 1")
    need = min_history_length(k)
    kept = {u: h for u, h in log.histories.items() if len(h) >= need}

    remap: dict[int, int] = {}
    for h in kept.values():
        for i in h.items:
            remap.setdefault(i, len(remap) + 1)
    histories = {
        u: UserHistory(u, tuple(remap[i] for i in h.items), h.timestamps) for u, h in kept.items()
    }
    item_keys = [""] * len(remap)
    for old, new in remap.items():
        item_keys[new - 1] = log.item_keys[old - 1]
    categories = {remap[i]: c for i, c in log.categories.items() if i in remap}
    logger.info(
        "filter k=%d: users %d -> %d, items %d -> %d",
        k, len(log.histories), len(histories), log.catalog_size, len(item_keys),
    )
    return InteractionLog(histories, item_keys, categories)


def split_history(h: UserHistory, k: int, scheme: str = "nested", augment: bool = False) -> list[SplitExample]:
    n = len(h)
    need = min_history_length(k)
    if n < need:
        raise HistoryTooShort(h.user, n, need)
    items = h.items
    user = str(h.user)

    def ex(segment: str, cut: int) -> SplitExample:
        return SplitExample(user, segment, items[:cut], FutureTarget(items[cut:cut + k]))

    if scheme == "nested":
        cuts = {"train": n - 3 * k, "valid": n - 2 * k, "test": n - k}
    elif scheme == "shared":
        # validation and test share one cut; train sits one horizon earlier
        cuts = {"train": n - 2 * k, "valid": n - k, "test": n - k}
    else:
        raise ValueError(f"unknown split scheme {scheme!r}")

    out = []
    if augment:
        # every earlier window whose target ends before the main train target
        for cut in range(1, cuts["train"]):
            out.append(ex("train", cut))
    out.extend(ex(seg, cuts[seg]) for seg in SEGMENTS)
    return out


def split_leave_k(log: InteractionLog, k: int, scheme: str = "nested", augment: bool = False) -> list[SplitExample]:
    """Leave-k-out train/valid/test examples, ordered by user key then segment."""
    if k < 1:
        raise ValueError("horizon k must be >= 1")
    out: list[SplitExample] = []
    for user in sorted(log.histories):
        out.extend(split_history(log.histories[user], k, scheme, augment))
    return out


def by_segment(examples: Iterable[SplitExample], segment: str) -> list[SplitExample]:
    return [e for e in examples if e.segment == segment]


def write_splits(examples: Iterable[SplitExample], fh: IO[str]) -> None:
    for e in examples:
        fh.write(json.dumps(e.to_json(), separators=(",", ":")) + "\n")


def read_splits(fh: IO[str]) -> list[SplitExample]:
    return [SplitExample.from_json(json.loads(line)) for line in fh if line.strip()]
