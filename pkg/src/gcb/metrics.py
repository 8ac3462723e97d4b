"""Position-wise and trajectory-level HR / NDCG."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import IO, Sequence

from .data_model import FutureTarget, GCBError, RankedStepList


class HorizonMismatch(GCBError, ValueError):
    pass


ORDINALS = {1: "1st", 2: "2nd", 3: "3rd"}


def ordinal(j: int) -> str:
    if j in ORDINALS:
        return ORDINALS[j]
    if 10 < j % 100 < 14:
        return f"{j}th"
    return f"{j}" + {1: "st", 2: "nd", 3: "rd"}.get(j % 10, "th")


def _steps(pred) -> Sequence[RankedStepList]:
    return pred.steps if hasattr(pred, "steps") else pred


def _truth(t) -> tuple[int, ...]:
    return t.items if isinstance(t, FutureTarget) else tuple(t)


def _check(preds, truths, j: int):
    if len(preds) != len(truths):
        raise HorizonMismatch(f"{len(preds)} predictions for {len(truths)} truths")
    for p, t in zip(preds, truths):
        if not 1 <= j <= len(_truth(t)):
            raise HorizonMismatch(f"step {j} outside truth horizon {len(_truth(t))}")
        if len(_steps(p)) < j:
            raise HorizonMismatch(f"prediction has {len(_steps(p))} steps, need {j}")


def _rank(pred, truth, j: int, K: int) -> int | None:
    rank = _steps(pred)[j - 1].rank_of(_truth(truth)[j - 1])
    return rank if rank is not None and rank <= K else None


def step_hr(preds, truths, j: int, K: int) -> float:
    """Fraction of users whose step-j truth is in the top K of that step's list."""
    _check(preds, truths, j)
    if not preds:
        return 0.0
    return sum(_rank(p, t, j, K) is not None for p, t in zip(preds, truths)) / len(preds)


def step_ndcg(preds, truths, j: int, K: int) -> float:
    """Mean 1/log2(rank + 1) for step-j hits within K, 0 for misses (IDCG = 1)."""
    _check(preds, truths, j)
    if not preds:
        return 0.0
    total = 0.0
    for p, t in zip(preds, truths):
        r = _rank(p, t, j, K)
        if r is not None:
            total += 1.0 / math.log2(r + 1)
    return total / len(preds)


def geometric_mean(values: Sequence[float]) -> float:
    if any(v <= 0 for v in values):
        return 0.0
    if all(v == values[0] for v in values):
        return values[0]
    gm = math.exp(sum(math.log(v) for v in values) / len(values))
    # exp/log rounding can push the result an ulp above the arithmetic mean
    return min(gm, arithmetic_mean(values))


def arithmetic_mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


@dataclass
class EvalReport:
    k: int
    users: int
    Ks: tuple[int, ...]
    step: dict[tuple[str, int, int], float] = field(default_factory=dict)  # (HR|NDCG, K, j)
    aggregate: dict[tuple[str, int], float] = field(default_factory=dict)  # (MHR|SHR|..., K)

    def named(self) -> dict[str, float]:
        """Flat dict keyed the way results tables label them, e.g. ``MHR@5``, ``2nd_NDCG@10``."""
        out = {}
        for K in self.Ks:
            for name in ("MHR", "MNDCG", "SHR", "SNDCG"):
                out[f"{name}@{K}"] = self.aggregate[(name, K)]
        for j in range(1, self.k + 1):
            for K in self.Ks:
                for m in ("HR", "NDCG"):
                    out[f"{ordinal(j)}_{m}@{K}"] = self.step[(m, K, j)]
        return out

    def to_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "K", "position", "value"])
        for K in self.Ks:
            for name in ("MHR", "MNDCG", "SHR", "SNDCG"):
                w.writerow([name, K, "all", repr(self.aggregate[(name, K)])])
        for j in range(1, self.k + 1):
            for K in self.Ks:
                for m in ("HR", "NDCG"):
                    w.writerow([m, K, j, repr(self.step[(m, K, j)])])

    def to_json(self, fh: IO[str]) -> None:
        json.dump({"k": self.k, "users": self.users, "metrics": self.named()}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def aggregate(step_metrics: dict[tuple[str, int, int], float], k: int, Ks: Sequence[int], users: int) -> EvalReport:
    """MHR/MNDCG: arithmetic mean over steps; SHR/SNDCG: geometric mean over steps."""
    report = EvalReport(k, users, tuple(Ks), dict(step_metrics))
    for K in Ks:
        for m in ("HR", "NDCG"):
            vals = [step_metrics[(m, K, j)] for j in range(1, k + 1)]
            report.aggregate[(f"M{m}", K)] = arithmetic_mean(vals)
            report.aggregate[(f"S{m}", K)] = geometric_mean(vals)
    return report


def evaluate(preds, truths, k: int, Ks: Sequence[int] = (5, 10)) -> EvalReport:
    step_metrics = {}
    for K in Ks:
        for j in range(1, k + 1):
            step_metrics[("HR", K, j)] = step_hr(preds, truths, j, K)
            step_metrics[("NDCG", K, j)] = step_ndcg(preds, truths, j, K)
    return aggregate(step_metrics, k, Ks, len(preds))
