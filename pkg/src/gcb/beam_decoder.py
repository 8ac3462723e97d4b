"""Beam search over Semantic-ID tokens and conversion to per-step ranked item lists."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np
import torch

from .data_model import RankedStepList
from .generator.model import ContextStates, Seq2Seq
from .rq_codec.semantic_ids import CodeMap
from .tokenizer import BOS, EOS, PAD, Unmappable, Vocabulary, batch_tokenize, detokenize_blocks

_NO_TOKEN = -1  # filler after a beam has finished; sorts before every real token


@dataclass(frozen=True)
class BeamCandidate:
    tokens: tuple[int, ...]  # generated tokens, BOS excluded, EOS included when emitted
    logprob: float
    finished: bool


@dataclass
class TrajectoryPrediction:
    user: str
    steps: list[RankedStepList]
    beam_logprobs: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "user": self.user,
            "steps": [list(s.candidates) for s in self.steps],
            "beam_logprobs": [round(float(x), 6) for x in self.beam_logprobs],
        }


class PrefixConstraint:
    """Restricts generation to token sequences that spell k valid Semantic-IDs then EOS."""

    def __init__(self, codemap: CodeMap, vocab: Vocabulary, k: int):
        self.vocab = vocab
        self.k = k
        self.L = codemap.code_len
        allowed: dict[tuple[int, ...], set[int]] = {}
        for row in codemap.codes:
            toks = vocab.item_tokens(row.tolist())
            for p in range(self.L):
                allowed.setdefault(tuple(toks[:p]), set()).add(toks[p])
        self._allowed = {key: np.array(sorted(v), dtype=np.int64) for key, v in allowed.items()}

    def mask(self, seqs: np.ndarray) -> np.ndarray:
        """Boolean (n, V) mask of permitted next tokens for each generated prefix."""
        n, t = seqs.shape
        out = np.zeros((n, self.vocab.size), dtype=bool)
        block, pos = divmod(t, self.L)
        if block >= self.k:
            out[:, EOS] = True
            return out
        for r in range(n):
            key = tuple(int(x) for x in seqs[r, t - pos:]) if pos else ()
            toks = self._allowed.get(key)
            if toks is not None:
                out[r, toks] = True
        return out


def _log_probs(model: Seq2Seq, ctx: ContextStates, seqs: np.ndarray) -> np.ndarray:
    # rows that already finished carry filler; it only feeds positions nobody reads
    body = np.where(seqs == _NO_TOKEN, PAD, seqs)
    prefix = np.concatenate([np.full((len(seqs), 1), BOS, dtype=np.int64), body], axis=1)
    with torch.no_grad():
        lp = model.step_log_probs(ctx, torch.as_tensor(prefix))
    return lp.double().cpu().numpy()


def _select(scores: np.ndarray, seqs: np.ndarray, B: int) -> np.ndarray:
    """Indices of the best ``B`` candidates: score desc, then lexicographically smaller sequence."""
    finite = np.flatnonzero(np.isfinite(scores))
    if len(finite) > B:
        kth = np.partition(scores[finite], len(finite) - B)[len(finite) - B]
        finite = finite[scores[finite] >= kth]
    keys = [seqs[finite, c] for c in range(seqs.shape[1] - 1, -1, -1)] + [-scores[finite]]
    order = np.lexsort(keys) if keys else np.arange(len(finite))
    return finite[order[:B]]


def beam_search(
    model: Seq2Seq,
    src: np.ndarray,
    src_valid: np.ndarray | None,
    beam_size: int,
    max_len: int,
    constraint: PrefixConstraint | None = None,
) -> list[list[BeamCandidate]]:
    """Length-synchronous beam search for every source row; beams sorted by logprob desc.

    Finished beams keep competing with their final score; no length
    normalization is applied.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    model.eval()
    src = np.atleast_2d(np.asarray(src, dtype=np.int64))
    valid = None if src_valid is None else np.atleast_2d(np.asarray(src_valid, dtype=np.int64))
    with torch.no_grad():
        ctx = model.encode(torch.as_tensor(src), None if valid is None else torch.as_tensor(valid))
    N, V = len(src), model.cfg.vocab_size

    seqs = [np.zeros((1, 0), dtype=np.int64) for _ in range(N)]
    scores = [np.zeros(1) for _ in range(N)]
    done = [np.zeros(1, dtype=bool) for _ in range(N)]
    for t in range(max_len):
        live_user = np.concatenate([np.full(int((~d).sum()), u) for u, d in enumerate(done)])
        if len(live_user) == 0:
            break
        live_seqs = np.concatenate([s[~d] for s, d in zip(seqs, done) if not d.all()])
        logp = _log_probs(model, ctx.select(torch.as_tensor(live_user)), live_seqs)
        if constraint is not None:
            logp = np.where(constraint.mask(live_seqs), logp, -np.inf)
        row = 0
        for u in range(N):
            live = ~done[u]
            n_live = int(live.sum())
            if n_live == 0:
                continue
            lp = logp[row:row + n_live]
            row += n_live
            parents = seqs[u][live]
            exp_scores = (scores[u][live][:, None] + lp).ravel()
            exp_seqs = np.concatenate(
                [np.repeat(parents, V, axis=0), np.tile(np.arange(V), n_live)[:, None]], axis=1
            )
            fin_seqs = np.concatenate(
                [seqs[u][~live], np.full((int((~live).sum()), 1), _NO_TOKEN, dtype=np.int64)], axis=1
            )
            cand_seqs = np.concatenate([exp_seqs, fin_seqs])
            cand_scores = np.concatenate([exp_scores, scores[u][~live]])
            cand_done = np.concatenate([
                (exp_seqs[:, -1] == EOS) | (t + 1 >= max_len),
                np.ones(len(fin_seqs), dtype=bool),
            ])
            keep = _select(cand_scores, cand_seqs, beam_size)
            seqs[u], scores[u], done[u] = cand_seqs[keep], cand_scores[keep], cand_done[keep]

    out = []
    for u in range(N):
        beams = []
        for s, sc, d in zip(seqs[u], scores[u], done[u]):
            toks = tuple(int(x) for x in s if x != _NO_TOKEN)
            beams.append(BeamCandidate(toks, float(sc), bool(d) or len(toks) >= max_len))
        out.append(beams)
    return out


def greedy_decode(model: Seq2Seq, src: np.ndarray, src_valid: np.ndarray | None, max_len: int) -> list[BeamCandidate]:
    """Argmax decoding (lowest token id on ties), stopping at EOS."""
    model.eval()
    src = np.atleast_2d(np.asarray(src, dtype=np.int64))
    with torch.no_grad():
        ctx = model.encode(torch.as_tensor(src), None if src_valid is None else torch.as_tensor(np.atleast_2d(src_valid)))
    N = len(src)
    seqs = np.zeros((N, 0), dtype=np.int64)
    score = np.zeros(N)
    alive = np.ones(N, dtype=bool)
    for _ in range(max_len):
        lp = _log_probs(model, ctx, seqs)
        nxt = lp.argmax(-1)
        score = np.where(alive, score + lp[np.arange(N), nxt], score)
        nxt = np.where(alive, nxt, _NO_TOKEN)
        seqs = np.concatenate([seqs, nxt[:, None]], axis=1)
        alive &= nxt != EOS
        if not alive.any():
            break
    return [
        BeamCandidate(tuple(int(x) for x in s if x != _NO_TOKEN), float(sc), True)
        for s, sc in zip(seqs, score)
    ]


def beams_to_trajectories(
    beams: Sequence[BeamCandidate], codemap: CodeMap, vocab: Vocabulary, k: int, K: int, user: str = ""
) -> TrajectoryPrediction:
    """Per-step ranked lists from score-ordered beams, skipping undecodable and duplicate items."""
    decoded = [detokenize_blocks(b.tokens, codemap, vocab) for b in beams]
    steps = []
    for j in range(k):
        cands: list[int] = []
        seen: set[int] = set()
        for blocks in decoded:
            if len(cands) >= K:
                break
            if len(blocks) <= j or any(x is Unmappable for x in blocks[: j + 1]):
                continue
            item = blocks[j]
            if item in seen:
                continue
            seen.add(item)
            cands.append(item)
        steps.append(RankedStepList(j + 1, tuple(cands)))
    return TrajectoryPrediction(user, steps, [b.logprob for b in beams])


def predict(
    model: Seq2Seq,
    examples,
    codemap: CodeMap,
    vocab: Vocabulary,
    k: int,
    beam_size: int,
    K: int,
    max_src_len: int,
    batch_size: int = 64,
    constrained: bool = False,
) -> list[TrajectoryPrediction]:
    """Beam-search trajectories for a list of SplitExamples, in input order."""
    constraint = PrefixConstraint(codemap, vocab, k) if constrained else None
    max_len = k * vocab.code_len + 1
    out: list[TrajectoryPrediction] = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start:start + batch_size]
        src, valid, _ = batch_tokenize(chunk, codemap, vocab, max_src_len)
        for ex, beams in zip(chunk, beam_search(model, src, valid, beam_size, max_len, constraint)):
            out.append(beams_to_trajectories(beams, codemap, vocab, k, K, user=ex.user))
    return out


def write_predictions(preds: Sequence[TrajectoryPrediction], fh: IO[str]) -> None:
    for p in preds:
        fh.write(json.dumps(p.to_json(), separators=(",", ":")) + "\n")
