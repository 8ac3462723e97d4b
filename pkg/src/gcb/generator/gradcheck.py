"""Finite-difference verification of generator gradients at float64."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import torch

from ..data_model import GCBError
from .model import ModelConfig, build_model, nll_loss


class GradMismatch(GCBError, AssertionError):
    def __init__(self, tensor: str, err: float):
        super().__init__(f"gradient mismatch in {tensor}: relative error {err:.3e}")
        self.tensor = tensor
        self.err = err


@dataclass
class GradReport:
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise |a - n| / max(|a|, |n|, floor).

    Entries smaller than ``floor`` sit below finite-difference resolution and
    are effectively compared on an absolute scale.
    """
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def central_difference(f, theta: torch.Tensor, eps: float = 1e-5) -> np.ndarray:
    """d f / d theta by central differences, perturbing ``theta`` in place one entry at a time."""
    flat = theta.data.view(-1)
    out = np.empty(flat.numel())
    for i in range(flat.numel()):
        orig = float(flat[i])
        flat[i] = orig + eps
        plus = f()
        flat[i] = orig - eps
        minus = f()
        flat[i] = orig
        out[i] = (plus - minus) / (2 * eps)
    return out.reshape(tuple(theta.shape))


def toy_batch(cfg: ModelConfig, batch: int = 3, src_len: int = 6, tgt_len: int = 5, seed: int = 0):
    rng = np.random.default_rng(seed)
    src = rng.integers(3, cfg.vocab_size, size=(batch, src_len))
    src[0, src_len - 2:] = 0  # trailing PAD exercises the key mask
    tgt = rng.integers(1, cfg.vocab_size, size=(batch, tgt_len))
    dec_in = np.concatenate([np.full((batch, 1), 2), tgt[:, :-1]], axis=1)
    return tuple(torch.as_tensor(a) for a in (src, (src != 0).astype(np.int64), dec_in, tgt))


def grad_check(cfg: ModelConfig | None = None, tol: float = 1e-4, eps: float = 1e-5, raise_on_fail: bool = True) -> GradReport:
    """Compare autograd gradients of the NLL with central differences for every parameter entry."""
    if cfg is None:
        cfg = ModelConfig(vocab_size=11, enc_layers=2, dec_layers=2, hidden=8, ff_dim=16, heads=2,
                          max_src_len=8, max_tgt_len=8)
    cfg = replace(cfg, dropout=0.0, dtype="float64")
    model = build_model(cfg)
    model.eval()
    src, valid, dec_in, tgt = toy_batch(cfg)

    def loss_value() -> float:
        with torch.no_grad():
            return float(nll_loss(model(src, valid, dec_in), tgt))

    model.zero_grad()
    nll_loss(model(src, valid, dec_in), tgt).backward()
    report = GradReport()
    for name, p in model.named_parameters():
        analytic = p.grad.detach().numpy().copy()
        numeric = central_difference(loss_value, p, eps)
        report.errors[name] = float(relative_error(analytic, numeric).max())
    worst = max(report.errors, key=report.errors.get)
    if raise_on_fail and report.errors[worst] >= tol:
        raise GradMismatch(worst, report.errors[worst])
    return report
