"""Semantic-ID vocabulary and item-sequence <-> token-sequence conversion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import FutureTarget, GCBError
from .rq_codec.semantic_ids import CodeMap

PAD, EOS, BOS = 0, 1, 2
NUM_SPECIAL = 3


class UnknownItem(GCBError, KeyError):
    def __init__(self, item):
        super().__init__(f"item {item!r} has no Semantic-ID")
        self.item = item


class _Unmappable:
    _inst = None

    def __new__(cls):
        if cls._inst is None:
            cls._inst = super().__new__(cls)
        return cls._inst

    def __repr__(self) -> str:
        return "Unmappable"

    def __reduce__(self):
        return (_Unmappable, ())


Unmappable = _Unmappable()


@dataclass(frozen=True)
class Vocabulary:
    """Disjoint token ranges per code position, after PAD/EOS/BOS."""

    position_sizes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "position_sizes", tuple(int(v) for v in self.position_sizes))
        if not self.position_sizes or min(self.position_sizes) < 1:
            raise ValueError("every code position needs at least one code")

    @classmethod
    def from_codemap(cls, codemap: CodeMap) -> "Vocabulary":
        return cls(tuple(codemap.vocab_sizes))

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], NUM_SPECIAL
        for v in self.position_sizes:
            out.append(acc)
            acc += v
        return tuple(out)

    @property
    def size(self) -> int:
        return NUM_SPECIAL + sum(self.position_sizes)

    @property
    def code_len(self) -> int:
        return len(self.position_sizes)

    def encode(self, position: int, code: int) -> int:
        if not 0 <= code < self.position_sizes[position]:
            raise ValueError(f"code {code} out of range for position {position}")
        return self.offsets[position] + code

    def decode(self, token: int) -> tuple[int, int] | None:
        """(position, code) for a code token; None for specials and out-of-range ids."""
        if token < NUM_SPECIAL:
            return None
        for p, (off, v) in enumerate(zip(self.offsets, self.position_sizes)):
            if off <= token < off + v:
                return p, token - off
        return None

    def item_tokens(self, codes: Sequence[int]) -> list[int]:
        return [self.offsets[p] + int(c) for p, c in enumerate(codes)]

    def to_dict(self) -> dict:
        return {"position_sizes": list(self.position_sizes), "offsets": list(self.offsets), "size": self.size}


@dataclass
class TokenSequence:
    tokens: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def content(self) -> np.ndarray:
        return self.tokens[self.mask.astype(bool)]


def _item_block(item: int, codemap: CodeMap, vocab: Vocabulary) -> list[int]:
    try:
        return vocab.item_tokens(codemap.semantic_id(int(item)))
    except KeyError:
        raise UnknownItem(item) from None


def default_max_len(code_len: int, max_items: int = 20) -> int:
    return max_items * code_len


def tokenize_history(items: Sequence[int], codemap: CodeMap, vocab: Vocabulary, max_len: int) -> TokenSequence:
    """Concatenate Semantic-ID blocks oldest first, dropping whole oldest blocks to fit ``max_len``."""
    L = vocab.code_len
    keep = max_len // L
    blocks = [_item_block(i, codemap, vocab) for i in items]
    if keep < len(blocks):
        blocks = blocks[len(blocks) - keep:]
    content = [t for b in blocks for t in b]
    tokens = np.full(max_len, PAD, dtype=np.int64)
    mask = np.zeros(max_len, dtype=np.int64)
    tokens[: len(content)] = content
    mask[: len(content)] = 1
    return TokenSequence(tokens, mask)


def tokenize_target(target: FutureTarget | Sequence[int], codemap: CodeMap, vocab: Vocabulary) -> TokenSequence:
    items = target.items if isinstance(target, FutureTarget) else target
    content = [t for i in items for t in _item_block(i, codemap, vocab)] + [EOS]
    tokens = np.asarray(content, dtype=np.int64)
    return TokenSequence(tokens, np.ones(len(tokens), dtype=np.int64))


def detokenize_blocks(tokens: Sequence[int], codemap: CodeMap, vocab: Vocabulary) -> list:
    """Split generated tokens into per-item blocks and map each to an ItemId or ``Unmappable``.

    Everything from the first EOS or PAD on is ignored.
    """
    seq = []
    for t in tokens:
        t = int(t)
        if t in (EOS, PAD):
            break
        seq.append(t)
    L = vocab.code_len
    out: list = []
    for start in range(0, len(seq), L):
        block = seq[start:start + L]
        if len(block) < L:
            out.append(Unmappable)
            break
        code = []
        for p, t in enumerate(block):
            dec = vocab.decode(t)
            if dec is None or dec[0] != p:
                code = None
                break
            code.append(dec[1])
        item = codemap.lookup(tuple(code)) if code is not None else None
        out.append(item if item is not None else Unmappable)
    return out


def decoder_inputs(target_tokens: np.ndarray) -> np.ndarray:
    """Teacher-forcing decoder input: BOS then the target shifted right by one."""
    target_tokens = np.asarray(target_tokens)
    out = np.empty_like(target_tokens)
    out[..., 0] = BOS
    out[..., 1:] = target_tokens[..., :-1]
    return out


def batch_tokenize(examples, codemap: CodeMap, vocab: Vocabulary, max_len: int):
    """Stack histories and targets of a list of SplitExamples into arrays.

    Returns (src, src_mask, tgt) with tgt including the trailing EOS.
    """
    src = np.stack([tokenize_history(e.input_items, codemap, vocab, max_len).tokens for e in examples])
    tgt = np.stack([tokenize_target(e.target, codemap, vocab).tokens for e in examples])
    return src, (src != PAD).astype(np.int64), tgt
