import io

import numpy as np
import pytest
import torch

from gcb.rq_codec import (
    CodecConfig,
    ItemFeatures,
    RQVAE,
    encode_items,
    item_codes,
    load_codec,
    rqvae_grad_check,
    rqvae_loss,
    save_codec,
    train_rqvae,
)
from gcb.checkpoint import CheckpointError, read_npz


def test_loss_hand_example():
    x = torch.zeros(1, 2)
    r, q = torch.tensor([[1.0, 0.0]]), torch.zeros(1, 2)
    total, recon, commit = rqvae_loss(x, x.clone(), r, [r], [q], beta=0.25)
    assert float(total) == pytest.approx(1.25)
    assert float(recon) == 0.0


def test_loss_beta_zero_and_perfect():
    x = torch.ones(3, 2)
    r, q = torch.full((3, 2), 2.0), torch.ones(3, 2)
    total, recon, commit = rqvae_loss(x, x + 1, r, [r], [q], beta=0.0)
    assert float(recon) == pytest.approx(2.0) and float(commit) == pytest.approx(2.0)
    z = torch.zeros(3, 2)
    assert float(rqvae_loss(x, x, z, [z], [z], 0.25)[0]) == 0.0


def test_gradient_routing():
    x = torch.zeros(1, 2)
    r = torch.tensor([[1.0, 0.0]], requires_grad=True)
    q = torch.zeros(1, 2, requires_grad=True)
    total, _, _ = rqvae_loss(x, x, r, [r], [q], beta=0.5)
    total.backward()
    # codeword term pulls q toward r; beta term pulls r toward q
    assert q.grad.tolist() == [[-2.0, 0.0]]
    assert r.grad.tolist() == [[1.0, 0.0]]


def test_grad_check_passes():
    report = rqvae_grad_check()
    assert report.max_error < 1e-4


def small_cfg(**kw):
    base = dict(level_sizes=[4, 4], latent_dim=4, hidden=[16], feature_dim=8, epochs=15, batch_size=16, seed=0)
    base.update(kw)
    return CodecConfig(**base)


def test_training_is_deterministic():
    feats = ItemFeatures.random(40, 8, seed=1)
    m1, h1 = train_rqvae(feats, small_cfg())
    m2, h2 = train_rqvae(feats, small_cfg())
    assert h1.rows == h2.rows
    assert np.array_equal(item_codes(m1, feats), item_codes(m2, feats))


def test_single_item_is_memorized():
    feats = ItemFeatures.random(1, 8, seed=2)
    _, hist = train_rqvae(feats, small_cfg(level_sizes=[1], epochs=300, lr=1e-2))
    assert hist.rows[-1]["mse"] < 1e-3


def test_history_row_zero_is_post_init():
    feats = ItemFeatures.random(30, 8, seed=3)
    _, hist = train_rqvae(feats, small_cfg(epochs=2))
    assert [r["epoch"] for r in hist.rows] == [0, 1, 2]
    assert set(hist.rows[0]) == {"epoch", "total", "recon", "commit", "mse", "utilization"}


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        small_cfg(level_sizes=[0]).validate()
    with pytest.raises(ValueError):
        small_cfg(level_sizes=[]).validate()


def test_checkpoint_roundtrip(tmp_path):
    feats = ItemFeatures.random(20, 8, seed=4)
    model, _ = train_rqvae(feats, small_cfg(epochs=2))
    path = tmp_path / "codec.npz"
    save_codec(path, model, {"seeds": {"codec": 0}})
    loaded, meta = load_codec(path)
    assert meta["format_version"] == 1 and meta["seeds"] == {"codec": 0}
    assert np.array_equal(encode_items(model, feats), encode_items(loaded, feats))
    with pytest.raises(CheckpointError):
        read_npz(path, kind="generator", version=1)
    with pytest.raises(CheckpointError):
        read_npz(path, kind="rq_codec", version=2)


def test_features_reject_nonfinite():
    with pytest.raises(ValueError):
        ItemFeatures(np.array([[np.nan]]))
