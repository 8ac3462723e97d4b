"""Pre-LN encoder-decoder transformer over Semantic-ID tokens."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..checkpoint import array_digest, read_npz, write_npz
from ..data_model import GCBError

GENERATOR_FORMAT_VERSION = 1


class ShapeMismatch(GCBError, ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int
    enc_layers: int = 4
    dec_layers: int = 4
    hidden: int = 128
    ff_dim: int = 1024
    heads: int = 6
    dropout: float = 0.1
    max_src_len: int = 80
    max_tgt_len: int = 16
    seed: int = 0
    dtype: str = "float32"

    def validate(self) -> None:
        for name in ("vocab_size", "enc_layers", "dec_layers", "hidden", "ff_dim", "heads", "max_src_len", "max_tgt_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.heads > self.hidden:
            raise ValueError("more heads than hidden units")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def head_dim(self) -> int:
        # 128 hidden / 6 heads -> 21 per head, 126 concatenated, projected back to 128
        return self.hidden // self.heads


def torch_dtype(name: str) -> torch.dtype:
    return {"float32": torch.float32, "float64": torch.float64}[name]


class Attention(nn.Module):
    def __init__(self, hidden: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = hidden // heads
        inner = self.heads * self.head_dim
        self.q = nn.Linear(hidden, inner)
        self.k = nn.Linear(hidden, inner)
        self.v = nn.Linear(hidden, inner)
        self.o = nn.Linear(inner, hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, memory, key_valid=None, causal=False, return_weights=False):
        B, T, _ = x.shape
        S = memory.shape[1]
        q = self.q(x).view(B, T, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(memory).view(B, S, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(memory).view(B, S, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / (self.head_dim ** 0.5)
        allowed = torch.ones(B, 1, T, S, dtype=torch.bool, device=x.device)
        if key_valid is not None:
            allowed = allowed & key_valid[:, None, None, :].bool()
        if causal:
            allowed = allowed & torch.ones(T, S, dtype=torch.bool, device=x.device).tril()
        scores = scores.masked_fill(~allowed, torch.finfo(scores.dtype).min)
        weights = scores.softmax(-1) * allowed  # rows with no valid key become all-zero
        out = self.drop(weights) @ v
        out = self.o(out.transpose(1, 2).reshape(B, T, self.heads * self.head_dim))
        return (out, weights) if return_weights else out


class FeedForward(nn.Module):
    def __init__(self, hidden: int, ff_dim: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(hidden, ff_dim)
        self.fc2 = nn.Linear(ff_dim, hidden)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.fc2(self.drop(F.relu(self.fc1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.hidden)
        self.attn = Attention(cfg.hidden, cfg.heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.hidden)
        self.ff = FeedForward(cfg.hidden, cfg.ff_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, valid):
        h = self.ln1(x)
        x = x + self.drop(self.attn(h, h, valid))
        return x + self.drop(self.ff(self.ln2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.hidden)
        self.self_attn = Attention(cfg.hidden, cfg.heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.hidden)
        self.cross_attn = Attention(cfg.hidden, cfg.heads, cfg.dropout)
        self.ln3 = nn.LayerNorm(cfg.hidden)
        self.ff = FeedForward(cfg.hidden, cfg.ff_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, y, memory, memory_valid):
        h = self.ln1(y)
        y = y + self.drop(self.self_attn(h, h, causal=True))
        y = y + self.drop(self.cross_attn(self.ln2(y), memory, memory_valid))
        return y + self.drop(self.ff(self.ln3(y)))


@dataclass
class ContextStates:
    states: torch.Tensor  # (B, S, H)
    valid: torch.Tensor  # (B, S) 1 for content, 0 for PAD

    def repeat(self, n: int) -> "ContextStates":
        return ContextStates(self.states.repeat_interleave(n, 0), self.valid.repeat_interleave(n, 0))

    def select(self, idx) -> "ContextStates":
        return ContextStates(self.states[idx], self.valid[idx])


class Seq2Seq(nn.Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        super().__init__()
        self.cfg = cfg
        self.tok = nn.Embedding(cfg.vocab_size, cfg.hidden)
        self.enc_pos = nn.Embedding(cfg.max_src_len, cfg.hidden)
        self.dec_pos = nn.Embedding(cfg.max_tgt_len, cfg.hidden)
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.enc_layers))
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.dec_layers))
        self.enc_norm = nn.LayerNorm(cfg.hidden)
        self.dec_norm = nn.LayerNorm(cfg.hidden)
        self.out = nn.Linear(cfg.hidden, cfg.vocab_size)
        self.drop = nn.Dropout(cfg.dropout)
        for emb in (self.tok, self.enc_pos, self.dec_pos):
            nn.init.normal_(emb.weight, std=0.02)

    @property
    def dtype(self) -> torch.dtype:
        return self.tok.weight.dtype

    def _check(self, tokens: torch.Tensor, max_len: int, what: str):
        if tokens.dim() != 2:
            raise ShapeMismatch(f"{what} must be (batch, length), got {tuple(tokens.shape)}")
        if tokens.shape[1] > max_len:
            raise ShapeMismatch(f"{what} length {tokens.shape[1]} exceeds {max_len}")
        if tokens.numel() and (int(tokens.max()) >= self.cfg.vocab_size or int(tokens.min()) < 0):
            raise ShapeMismatch(f"{what} has token ids outside [0, {self.cfg.vocab_size})")

    def encode(self, src: torch.Tensor, src_valid: torch.Tensor | None = None) -> ContextStates:
        src = torch.as_tensor(src)
        self._check(src, self.cfg.max_src_len, "source")
        if src_valid is None:
            src_valid = (src != 0).long()
        src_valid = torch.as_tensor(src_valid)
        if src_valid.shape != src.shape:
            raise ShapeMismatch("source mask shape differs from source")
        pos = torch.arange(src.shape[1], device=src.device)
        x = self.drop(self.tok(src) + self.enc_pos(pos)[None])
        for layer in self.encoder:
            x = layer(x, src_valid)
        return ContextStates(self.enc_norm(x), src_valid)

    def decode_logits(self, ctx: ContextStates, prefix: torch.Tensor) -> torch.Tensor:
        """Logits (B, T, V); row t conditions on prefix[:, :t+1] and the context."""
        prefix = torch.as_tensor(prefix)
        self._check(prefix, self.cfg.max_tgt_len, "decoder prefix")
        if prefix.shape[0] != ctx.states.shape[0]:
            raise ShapeMismatch("prefix batch differs from context batch")
        pos = torch.arange(prefix.shape[1], device=prefix.device)
        y = self.drop(self.tok(prefix) + self.dec_pos(pos)[None])
        for layer in self.decoder:
            y = layer(y, ctx.states, ctx.valid)
        return self.out(self.dec_norm(y))

    def forward(self, src, src_valid, dec_in):
        return self.decode_logits(self.encode(src, src_valid), dec_in)

    def step_log_probs(self, ctx: ContextStates, prefix: torch.Tensor) -> torch.Tensor:
        """log p(next token | prefix, context) for the last prefix position, shape (B, V)."""
        return self.decode_logits(ctx, prefix)[:, -1].log_softmax(-1)


def nll_loss(logits: torch.Tensor, targets: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean negative log-likelihood over non-PAD target positions."""
    if logits.shape[:-1] != targets.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    if pad_mask is None:
        pad_mask = targets != 0
    keep = pad_mask.bool()
    nll = -logits.log_softmax(-1).gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    count = keep.sum()
    if count == 0:
        return nll.sum() * 0.0
    return (nll * keep).sum() / count


def build_model(cfg: ModelConfig) -> Seq2Seq:
    torch.manual_seed(cfg.seed)
    return Seq2Seq(cfg).to(torch_dtype(cfg.dtype))


def param_arrays(model: nn.Module) -> dict[str, np.ndarray]:
    return {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}


def param_digest(model: nn.Module) -> str:
    return array_digest(param_arrays(model))


def save_generator(path: str | Path, model: Seq2Seq, extra: dict | None = None) -> None:
    meta = {
        "format_version": GENERATOR_FORMAT_VERSION,
        "kind": "generator",
        "config": asdict(model.cfg),
        **(extra or {}),
    }
    write_npz(path, meta, param_arrays(model))


def load_generator(path: str | Path) -> tuple[Seq2Seq, dict]:
    meta, arrays = read_npz(path, kind="generator", version=GENERATOR_FORMAT_VERSION)
    cfg = ModelConfig(**meta["config"])
    model = Seq2Seq(cfg).to(torch_dtype(cfg.dtype))
    model.load_state_dict({k: torch.as_tensor(v) for k, v in arrays.items()})
    model.eval()
    return model, meta
