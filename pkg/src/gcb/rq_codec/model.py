"""RQ-VAE: MLP encoder/decoder around a residual quantizer, trained with Adam."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .. import _accel
from ..checkpoint import read_npz, write_npz
from ..data_model import GCBError
from .quantize import Codebooks, init_codebooks, quantize_batch, utilization

logger = logging.getLogger(__name__)

CODEC_FORMAT_VERSION = 1


class NonFiniteLoss(GCBError, FloatingPointError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class CodecConfig:
    level_sizes: list[int] = field(default_factory=lambda: [32, 32, 32])
    latent_dim: int = 32
    hidden: list[int] = field(default_factory=lambda: [128, 64])
    feature_dim: int = 64
    epochs: int = 200
    lr: float = 1e-3
    beta: float = 0.25
    batch_size: int = 256
    kmeans_iters: int = 100
    seed: int = 0
    dtype: str = "float32"

    def validate(self) -> None:
        if not self.level_sizes or any(int(k) < 1 for k in self.level_sizes):
            raise ValueError(f"level_sizes must be a non-empty list of positive ints, got {self.level_sizes}")
        if self.latent_dim < 1 or self.feature_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("all layer widths must be >= 1")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or self.beta < 0:
            raise ValueError("epochs/batch_size/lr/beta out of range")


@dataclass
class ItemFeatures:
    matrix: np.ndarray  # row i-1 holds x_i
    source: str = "random"

    def __post_init__(self):
        self.matrix = np.ascontiguousarray(self.matrix)
        if self.matrix.ndim != 2:
            raise ValueError("item features must be a 2-D matrix")
        if not np.isfinite(self.matrix).all():
            raise ValueError("item features contain non-finite entries")

    @classmethod
    def random(cls, num_items: int, dim: int = 64, seed: int = 0) -> "ItemFeatures":
        rng = np.random.default_rng(seed)
        return cls(rng.standard_normal((num_items, dim)), source=f"random({seed})")

    @classmethod
    def load(cls, path: str | Path) -> "ItemFeatures":
        return cls(np.load(path), source=f"file({Path(path).name})")


def mlp(widths: Sequence[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(widths) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class EncoderDecoder(nn.Module):
    def __init__(self, feature_dim: int, latent_dim: int, hidden: Sequence[int]):
        super().__init__()
        self.encoder = mlp([feature_dim, *hidden, latent_dim])
        self.decoder = mlp([latent_dim, *reversed(hidden), feature_dim])


class RQVAE(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        self.codec = EncoderDecoder(cfg.feature_dim, cfg.latent_dim, cfg.hidden)
        self.codebooks = nn.ParameterList(
            [nn.Parameter(torch.zeros(k, cfg.latent_dim)) for k in cfg.level_sizes]
        )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.codec.encoder(x)

    def set_codebooks(self, books: Codebooks) -> None:
        with torch.no_grad():
            for p, b in zip(self.codebooks, books.levels):
                p.copy_(torch.as_tensor(b, dtype=p.dtype))

    def numpy_codebooks(self) -> Codebooks:
        return Codebooks([p.detach().cpu().numpy().copy() for p in self.codebooks])

    def quantize(self, z: torch.Tensor):
        """Residual quantization inside the graph.

        Residuals are formed against detached codewords so the codeword term
        only moves codebooks and the beta term only moves the encoder.
        """
        zd = z.detach().cpu().numpy()
        residuals, selected, codes = [], [], []
        partial = None
        for book in self.codebooks:
            r = z if partial is None else z - partial
            idx, _ = _accel.nearest(r.detach().cpu().numpy(), book.detach().cpu().numpy().astype(zd.dtype))
            idx_t = torch.as_tensor(idx, device=z.device)
            q = book[idx_t]
            residuals.append(r)
            selected.append(q)
            codes.append(idx_t)
            partial = q.detach() if partial is None else partial + q.detach()
        return torch.stack(codes, 1), residuals, selected, partial

    def forward(self, x: torch.Tensor):
        z = self.encode(x)
        codes, residuals, selected, zhat = self.quantize(z)
        z_st = z + (zhat - z).detach()
        xhat = self.codec.decoder(z_st)
        return xhat, z, codes, residuals, selected


def rqvae_loss(x, xhat, z, residuals, selected, beta: float):
    """(total, recon, commit), each averaged over the batch.

    ``recon`` is the squared reconstruction error. ``commit`` sums, per level,
    the codeword term ||sg[r] - q||^2 and the encoder term beta * ||r - sg[q]||^2.
    ``z`` is accepted for signature symmetry; residual 1 already equals it.
    """
    recon = ((x - xhat) ** 2).sum(-1).mean()
    commit = x.new_zeros(())
    for r, q in zip(residuals, selected):
        commit = commit + ((r.detach() - q) ** 2).sum(-1).mean()
        commit = commit + beta * ((r - q.detach()) ** 2).sum(-1).mean()
    return recon + commit, recon, commit


def _dtype(name: str) -> torch.dtype:
    return {"float32": torch.float32, "float64": torch.float64}[name]


@dataclass
class CodecHistory:
    rows: list[dict] = field(default_factory=list)

    def column(self, name: str) -> list[float]:
        return [r[name] for r in self.rows]


def _evaluate(model: RQVAE, x: torch.Tensor, beta: float) -> dict:
    with torch.no_grad():
        xhat, z, codes, residuals, selected = model(x)
        total, recon, commit = rqvae_loss(x, xhat, z, residuals, selected, beta)
    codes_np = codes.cpu().numpy()
    return {
        "total": float(total),
        "recon": float(recon),
        "commit": float(commit),
        "mse": float(((x - xhat) ** 2).mean()),
        "utilization": utilization(codes_np, model.cfg.level_sizes),
    }


def train_rqvae(features: ItemFeatures, cfg: CodecConfig) -> tuple[RQVAE, CodecHistory]:
    """Fit the codec. History row 0 is measured right after k-means initialization."""
    cfg.validate()
    if features.matrix.shape[1] != cfg.feature_dim:
        cfg = CodecConfig(**{**asdict(cfg), "feature_dim": features.matrix.shape[1]})
    dtype = _dtype(cfg.dtype)
    torch.manual_seed(cfg.seed)
    model = RQVAE(cfg).to(dtype)
    x = torch.as_tensor(features.matrix, dtype=dtype)

    with torch.no_grad():
        encoded = model.encode(x).cpu().numpy().astype(np.float64)
    model.set_codebooks(init_codebooks(encoded, cfg.level_sizes, seed=cfg.seed, max_iters=cfg.kmeans_iters))

    history = CodecHistory([{"epoch": 0, **_evaluate(model, x, cfg.beta)}])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    n = len(x)
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, cfg.batch_size):
            xb = x[perm[start:start + cfg.batch_size]]
            xhat, z, _, residuals, selected = model(xb)
            total, _, _ = rqvae_loss(xb, xhat, z, residuals, selected, cfg.beta)
            if not torch.isfinite(total):
                raise NonFiniteLoss(epoch, float(total))
            opt.zero_grad()
            total.backward()
            opt.step()
        row = {"epoch": epoch, **_evaluate(model, x, cfg.beta)}
        if not np.isfinite(row["total"]):
            raise NonFiniteLoss(epoch, row["total"])
        history.rows.append(row)
        if epoch % 50 == 0 or epoch == cfg.epochs:
            logger.info("codec epoch %d: mse=%.5f util=%s", epoch, row["mse"], row["utilization"])
    model.eval()
    return model, history


def encode_items(model: RQVAE, features: ItemFeatures) -> np.ndarray:
    p = next(model.parameters())
    with torch.no_grad():
        z = model.encode(torch.as_tensor(features.matrix, dtype=p.dtype))
    return z.cpu().numpy()


def item_codes(model: RQVAE, features: ItemFeatures) -> np.ndarray:
    """Per-item quantization codes, shape (M, L)."""
    z = encode_items(model, features)
    return quantize_batch(z, model.numpy_codebooks()).codes


def save_codec(path: str | Path, model: RQVAE, extra: dict | None = None) -> None:
    meta = {
        "format_version": CODEC_FORMAT_VERSION,
        "kind": "rq_codec",
        "config": asdict(model.cfg),
        **(extra or {}),
    }
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    write_npz(path, meta, arrays)


def load_codec(path: str | Path) -> tuple[RQVAE, dict]:
    meta, arrays = read_npz(path, kind="rq_codec", version=CODEC_FORMAT_VERSION)
    cfg = CodecConfig(**meta["config"])
    model = RQVAE(cfg).to(_dtype(cfg.dtype))
    model.load_state_dict({k: torch.as_tensor(v) for k, v in arrays.items()})
    model.eval()
    return model, meta
