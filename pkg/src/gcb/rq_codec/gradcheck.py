"""Finite-difference check of RQ-VAE gradients against a numpy surrogate.

Stop-gradient and the straight-through estimator mean autograd does not
return the derivative of the loss *value*. The surrogate below freezes every
stop-gradient quantity (codes, the straight-through offset, residuals and
codewords seen through ``sg``) as constants, so its true derivative is the
semi-gradient autograd should produce. It is written in plain numpy and shares
no code with the torch forward pass.
"""

from __future__ import annotations

import numpy as np
import torch

from ..generator.gradcheck import GradMismatch, GradReport, relative_error
from .model import CodecConfig, RQVAE, rqvae_loss


def _np_mlp(layers: list[tuple[np.ndarray, np.ndarray]], x: np.ndarray) -> np.ndarray:
    for i, (w, b) in enumerate(layers):
        x = x @ w.T + b
        if i < len(layers) - 1:
            x = np.maximum(x, 0.0)
    return x


def _linear_names(seq_prefix: str, model: RQVAE) -> list[tuple[str, str]]:
    names = [n for n, _ in model.named_parameters() if n.startswith(seq_prefix) and n.endswith(".weight")]
    return [(n, n[: -len("weight")] + "bias") for n in names]


def toy_codec(seed: int = 0) -> tuple[RQVAE, np.ndarray]:
    cfg = CodecConfig(level_sizes=[3, 2], latent_dim=3, hidden=[5], feature_dim=4, beta=0.25, seed=seed, dtype="float64")
    torch.manual_seed(seed)
    model = RQVAE(cfg).double()
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for book in model.codebooks:
            book.copy_(torch.as_tensor(rng.normal(size=tuple(book.shape))))
    return model, rng.normal(size=(6, 4))


def rqvae_grad_check(model: RQVAE | None = None, x: np.ndarray | None = None, tol: float = 1e-4,
                     eps: float = 1e-5, raise_on_fail: bool = True) -> GradReport:
    if model is None:
        model, x = toy_codec()
    beta = model.cfg.beta
    xt = torch.as_tensor(x, dtype=torch.float64)

    model.zero_grad()
    xhat, z, codes, residuals, selected = model(xt)
    total, _, _ = rqvae_loss(xt, xhat, z, residuals, selected, beta)
    total.backward()
    analytic = {n: p.grad.detach().numpy().copy() for n, p in model.named_parameters()}

    # frozen stop-gradient quantities at the current parameters
    codes_np = codes.numpy()
    z0 = z.detach().numpy()
    q_const = [q.detach().numpy() for q in selected]
    r_const = [r.detach().numpy() for r in residuals]
    zhat0 = np.sum(q_const, axis=0)
    offset = zhat0 - z0
    partial = [np.zeros_like(z0)]
    for q in q_const[:-1]:
        partial.append(partial[-1] + q)

    params = {n: p.detach().numpy().copy() for n, p in model.named_parameters()}
    enc_names = _linear_names("codec.encoder", model)
    dec_names = _linear_names("codec.decoder", model)
    book_names = [f"codebooks.{i}" for i in range(len(model.codebooks))]

    def surrogate(P: dict[str, np.ndarray]) -> float:
        zz = _np_mlp([(P[w], P[b]) for w, b in enc_names], x)
        xr = _np_mlp([(P[w], P[b]) for w, b in dec_names], zz + offset)
        loss = ((x - xr) ** 2).sum(-1).mean()
        for lvl, name in enumerate(book_names):
            q = P[name][codes_np[:, lvl]]
            loss += ((r_const[lvl] - q) ** 2).sum(-1).mean()
            loss += beta * (((zz - partial[lvl]) - q_const[lvl]) ** 2).sum(-1).mean()
        return float(loss)

    report = GradReport()
    for name, value in params.items():
        numeric = np.empty(value.size)
        flat = value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = surrogate(params)
            flat[i] = orig - eps
            minus = surrogate(params)
            flat[i] = orig
            numeric[i] = (plus - minus) / (2 * eps)
        report.errors[name] = float(relative_error(analytic[name], numeric.reshape(value.shape)).max())
    worst = max(report.errors, key=report.errors.get)
    if raise_on_fail and report.errors[worst] >= tol:
        raise GradMismatch(worst, report.errors[worst])
    return report
