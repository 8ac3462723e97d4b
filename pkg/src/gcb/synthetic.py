"""Synthetic Amazon-style review logs with learnable sequential structure.

Items are grouped into categories; within a category they form a ring, and a
user mostly steps to the next item on the ring of their current category,
occasionally jumping within it or switching categories. Item features are a
category center plus noise, so the codec has real cluster structure to find.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class SyntheticCorpus:
    records: list[dict]  # reviewerID / asin / unixReviewTime / category
    item_keys: list[str]
    item_category: dict[str, str]
    features: np.ndarray  # row i matches item_keys[i]

    def write_jsonl(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")
        return path

    def write_features(self, path: str | Path) -> Path:
        """npz with ``keys`` (raw item keys) and ``features`` rows in the same order."""
        path = Path(path)
        np.savez(path, keys=np.array(self.item_keys), features=self.features)
        return path


def make_corpus(
    num_users: int = 200,
    num_items: int = 120,
    num_categories: int = 6,
    min_len: int = 8,
    max_len: int = 20,
    p_next: float = 0.8,
    p_switch: float = 0.05,
    feature_dim: int = 64,
    noise: float = 0.3,
    seed: int = 0,
) -> SyntheticCorpus:
    rng = np.random.default_rng(seed)
    keys = [f"B{i:07d}" for i in range(num_items)]
    cat_of = np.arange(num_items) % num_categories
    rings = [np.flatnonzero(cat_of == c) for c in range(num_categories)]
    names = [f"cat{c}" for c in range(num_categories)]

    centers = rng.normal(scale=3.0, size=(num_categories, feature_dim))
    features = centers[cat_of] + rng.normal(scale=noise, size=(num_items, feature_dim))

    records = []
    for u in range(num_users):
        n = int(rng.integers(min_len, max_len + 1))
        c = int(rng.integers(num_categories))
        pos = int(rng.integers(len(rings[c])))
        t = 1_300_000_000 + int(rng.integers(0, 10_000_000))
        for _ in range(n):
            item = int(rings[c][pos])
            records.append({
                "reviewerID": f"U{u:05d}",
                "asin": keys[item],
                "unixReviewTime": t,
                "category": names[c],
            })
            t += int(rng.integers(3600, 30 * 86400))
            draw = rng.random()
            if draw < p_switch:
                c = int(rng.integers(num_categories))
                pos = int(rng.integers(len(rings[c])))
            elif draw < p_switch + p_next:
                pos = (pos + 1) % len(rings[c])
            else:
                pos = int(rng.integers(len(rings[c])))
    order = rng.permutation(len(records))  # files are rarely sorted by user
    return SyntheticCorpus(
        [records[i] for i in order],
        keys,
        {keys[i]: names[cat_of[i]] for i in range(num_items)},
        features,
    )


def markov_log(num_items: int = 50, num_users: int = 400, min_len: int = 7, max_len: int = 12, seed: int = 0):
    """Histories that walk a fixed random permutation: the next item is a function of the current one.

    Returns ``(log, successor)`` where ``successor[i]`` is the item after ``i``.
    """
    from .data_ingest import InteractionLog
    from .data_model import UserHistory

    rng = np.random.default_rng(seed)
    cycle = rng.permutation(num_items) + 1
    successor = {int(cycle[j]): int(cycle[(j + 1) % num_items]) for j in range(num_items)}
    histories = {}
    for u in range(num_users):
        n = int(rng.integers(min_len, max_len + 1))
        item = int(rng.integers(1, num_items + 1))
        seq = [item]
        for _ in range(n - 1):
            seq.append(successor[seq[-1]])
        histories[f"u{u:04d}"] = UserHistory(f"u{u:04d}", tuple(seq))
    return InteractionLog(histories, [f"i{i:03d}" for i in range(1, num_items + 1)]), successor


def shuffle_targets(examples, num_items: int, seed: int = 0):
    """Replace every target with uniformly random items (a floor no model can beat)."""
    from dataclasses import replace

    from .data_model import FutureTarget

    rng = np.random.default_rng(seed)
    return [replace(e, target=FutureTarget(rng.integers(1, num_items + 1, size=e.target.k).tolist())) for e in examples]
