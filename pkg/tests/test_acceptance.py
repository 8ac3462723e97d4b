"""Acceptance criteria 1-11, one test each, each recording a PASS/FAIL summary line."""

import json
import os
import subprocess
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml

from gcb import data_ingest
from gcb.beam_decoder import beam_search, greedy_decode, predict
from gcb.data_model import FutureTarget, RankedStepList
from gcb.generator import ModelConfig, TrainConfig, build_model, grad_check, load_generator, param_digest, train
from gcb.metrics import evaluate, step_hr
from gcb.rq_codec import (
    CodecConfig,
    ItemFeatures,
    assign_semantic_ids,
    item_codes,
    kmeans,
    load_codec,
    quantize_batch,
    rqvae_grad_check,
    train_rqvae,
    utilization,
)
from gcb.rq_codec.quantize import Codebooks
from gcb.synthetic import make_corpus, markov_log, shuffle_targets
from gcb.tokenizer import EOS, Vocabulary, detokenize_blocks, tokenize_history, tokenize_target
from oracles import METRIC_EXPECTED, best_sequence, exhaustive_argmin, metric_fixture, optimal_sse

pytestmark = pytest.mark.acceptance


def test_01_residual_identity_and_argmin(acceptance_report):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        d, L = int(rng.integers(1, 9)), int(rng.integers(1, 5))
        books = Codebooks([rng.normal(size=(int(rng.integers(1, 9)), d)) for _ in range(L)])
        z = rng.normal(size=d)
        res = quantize_batch(z[None], books)
        partial = None
        for lvl in range(L):
            r = z if partial is None else z - partial
            code = int(res.codes[0, lvl])
            bad += code != exhaustive_argmin(r, books.levels[lvl])
            q = books.levels[lvl][code]
            partial = q.copy() if partial is None else partial + q
        bad += not np.array_equal(res.zhat[0], partial)
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 5
    acceptance_report(1, "RQ identity & argmin", ok, f"1000 instances, {bad} violations, {elapsed:.2f}s (< 5s)")
    assert ok


def test_02_kmeans_oracle(acceptance_report):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    misses, nonmono, worst = [], 0, 0.0
    for i in range(100):
        N = int(rng.integers(1, 11))
        K = int(rng.integers(1, min(3, N) + 1))
        pts = rng.normal(size=(N, 2))
        res = kmeans(pts, K, seed=i, n_init=5)
        opt = optimal_sse(pts, K)
        if res.sse > opt * 1.0 + 1e-9:
            misses.append(i)
            worst = max(worst, res.sse / opt - 1)
        hist = np.array(res.sse_history)
        nonmono += int((np.diff(hist) > 1e-12 * (1 + hist[:-1])).any())
    elapsed = time.perf_counter() - t0
    ok = not misses and nonmono == 0 and elapsed < 30
    detail = (f"100 instances, {len(misses)} above optimum {misses} (worst +{worst:.3%}), "
              f"{nonmono} non-monotone histories, {elapsed:.1f}s (< 30s)")
    acceptance_report(2, "k-means vs brute-force optimum", ok, detail)
    assert ok


def test_03_gradient_checks(acceptance_report):
    t0 = time.perf_counter()
    codec = rqvae_grad_check(raise_on_fail=False).max_error
    gen = grad_check(raise_on_fail=False).max_error
    elapsed = time.perf_counter() - t0
    ok = codec < 1e-4 and gen < 1e-4 and elapsed < 120
    acceptance_report(3, "finite-difference gradient checks", ok,
                      f"codec max rel err {codec:.2e}, generator {gen:.2e} (< 1e-4), {elapsed:.1f}s (< 120s)")
    assert ok


def blobs(n_items, n_clusters, dim, seed):
    rng = np.random.default_rng(seed)
    centers = rng.normal(scale=4.0, size=(n_clusters, dim))
    labels = np.arange(n_items) % n_clusters
    return centers[labels] + rng.normal(size=(n_items, dim))


def test_04_codec_training_sanity(acceptance_report):
    t0 = time.perf_counter()
    feats = ItemFeatures(blobs(256, 8, 64, seed=0), source="blobs")
    cfg = CodecConfig(level_sizes=[8, 8, 8], epochs=200, feature_dim=64, seed=0)
    model, hist = train_rqvae(feats, cfg)
    first, last = hist.rows[0]["mse"], hist.rows[-1]["mse"]
    util = utilization(item_codes(model, feats), cfg.level_sizes)
    elapsed = time.perf_counter() - t0
    ok = last <= 0.5 * first and util[0] >= 6 and elapsed < 300
    acceptance_report(4, "codec training sanity", ok,
                      f"MSE {first:.3f} -> {last:.3f} (ratio {last / first:.3f} <= 0.5), "
                      f"level-1 utilization {util[0]}/8 (>= 6), {elapsed:.1f}s (< 300s)")
    assert ok


def test_05_codemap_bijectivity(acceptance_report):
    failures, collided_runs = 0, 0
    for run in range(100):
        rng = np.random.default_rng(run)
        M = int(rng.integers(5, 60))
        x = rng.normal(size=(M, 6))
        if run % 4 == 0:  # forced collisions: duplicated feature rows share all codes
            x[M // 2:] = x[: M - M // 2]
        cfg = CodecConfig(level_sizes=[2, 2, 2], latent_dim=4, hidden=[8], feature_dim=6, epochs=2, batch_size=16, seed=run)
        with _quiet():
            model, _ = train_rqvae(ItemFeatures(x), cfg)
        cm = assign_semantic_ids(item_codes(model, ItemFeatures(x)), cfg.level_sizes)
        collided_runs += int(cm.codes[:, -1].max() > 0)
        ok_run = len(cm.code_to_item) == M and all(cm.lookup(cm.semantic_id(i)) == i for i in range(1, M + 1))
        failures += not ok_run
    ok = failures == 0 and collided_runs > 0
    acceptance_report(5, "CodeMap bijectivity", ok,
                      f"100 codec runs, {failures} round-trip failures, {collided_runs} runs used the collision position")
    assert ok


class _quiet:
    def __enter__(self):
        import warnings

        self._ctx = warnings.catch_warnings()
        self._ctx.__enter__()
        warnings.simplefilter("ignore")

    def __exit__(self, *exc):
        return self._ctx.__exit__(*exc)


def test_06_tokenizer_round_trip(acceptance_report):
    rng = np.random.default_rng(0)
    bad_target, bad_trunc = 0, 0
    for case in range(1000):
        L = int(rng.integers(1, 4))
        sizes = [int(s) for s in rng.integers(1, 5, size=L)]
        M = int(rng.integers(1, 40))
        codes = np.stack([rng.integers(0, s, size=M) for s in sizes], axis=1)
        cm = assign_semantic_ids(codes, sizes)
        v = Vocabulary.from_codemap(cm)
        items = rng.integers(1, M + 1, size=int(rng.integers(1, 10))).tolist()
        bad_target += detokenize_blocks(tokenize_target(items, cm, v).tokens, cm, v) != items
        keep = int(rng.integers(1, 12))
        extra = int(rng.integers(0, v.code_len))  # slack smaller than one block
        hist = tokenize_history(items, cm, v, keep * v.code_len + extra)
        bad_trunc += detokenize_blocks(hist.tokens, cm, v) != items[-keep:]
    ok = bad_target == 0 and bad_trunc == 0
    acceptance_report(6, "tokenizer round trip", ok,
                      f"1000 cases, {bad_target} round-trip failures, {bad_trunc} truncation failures")
    assert ok


def test_07_beam_vs_exhaustive(acceptance_report):
    t0 = time.perf_counter()
    top_bad, greedy_bad = 0, 0
    for inst in range(50):
        rng = np.random.default_rng(inst)
        V, max_len = int(rng.integers(3, 7)), int(rng.integers(1, 5))
        cfg = ModelConfig(vocab_size=V, enc_layers=1, dec_layers=1, hidden=8, ff_dim=16, heads=2, dropout=0.0,
                          max_src_len=6, max_tgt_len=max_len + 1, seed=inst, dtype="float64")
        model = build_model(cfg).eval()
        src = rng.integers(2, V, size=int(rng.integers(1, 7)))
        ctx = model.encode(torch.as_tensor(src[None]))

        def step(seq):
            with torch.no_grad():
                return model.step_log_probs(ctx, torch.tensor([[2, *seq]])).double().numpy()[0]

        best = best_sequence(step, V, max_len, EOS)
        beams = beam_search(model, src[None], None, V ** max_len, max_len)[0]
        top_bad += beams[0].tokens != best[0]
        b1 = beam_search(model, src[None], None, 1, max_len)[0][0]
        greedy_bad += b1.tokens != greedy_decode(model, src[None], None, max_len)[0].tokens
    elapsed = time.perf_counter() - t0
    ok = top_bad == 0 and greedy_bad == 0 and elapsed < 60
    acceptance_report(7, "beam search vs exhaustive oracle", ok,
                      f"50 instances, {top_bad} top-1 mismatches, {greedy_bad} B=1/greedy mismatches, {elapsed:.1f}s (< 60s)")
    assert ok


def markov_run(shuffled: bool):
    k, H = 2, 6
    log, _ = markov_log(num_items=50, num_users=400, min_len=3 * k + 1 + H, max_len=3 * k + 4 + H, seed=0)
    examples = data_ingest.split_leave_k(log, k)
    tr, va, te = (data_ingest.by_segment(examples, s) for s in data_ingest.SEGMENTS)
    if shuffled:
        tr, va, te = (shuffle_targets(x, log.catalog_size, seed=i) for i, x in enumerate((tr, va, te)))
    feats = ItemFeatures.random(log.catalog_size, 32, seed=0)
    ccfg = CodecConfig(level_sizes=[4, 4, 4], latent_dim=16, hidden=[64], feature_dim=32, epochs=20, seed=0)
    codec, _ = train_rqvae(feats, ccfg)
    cm = assign_semantic_ids(item_codes(codec, feats), ccfg.level_sizes)
    vocab = Vocabulary.from_codemap(cm)
    mcfg = ModelConfig(vocab_size=vocab.size, enc_layers=2, dec_layers=2, hidden=64, ff_dim=128, heads=4, dropout=0.0,
                       max_src_len=H * vocab.code_len, max_tgt_len=k * vocab.code_len + 1, seed=0)
    tcfg = TrainConfig(lr=1e-3, batch_size=32, max_epochs=80, warmup_epochs=20, patience=10, seed=0)
    model, tlog = train(tr, va, cm, vocab, mcfg, tcfg)
    preds = predict(model, te, cm, vocab, k, beam_size=10, K=10, max_src_len=mcfg.max_src_len)
    return evaluate(preds, [e.target for e in te], k, (1, 5, 10)).named(), tlog


def test_08_overfit_end_to_end(acceptance_report):
    t0 = time.perf_counter()
    real, log_real = markov_run(shuffled=False)
    fake, log_fake = markov_run(shuffled=True)
    elapsed = time.perf_counter() - t0
    ok = real["1st_HR@1"] >= 0.95 and real["SHR@5"] >= 0.90 and fake["1st_HR@5"] <= 0.15 and elapsed < 900
    acceptance_report(8, "overfit end-to-end (deterministic Markov catalog)", ok,
                      f"1st_HR@1 {real['1st_HR@1']:.3f} (>= 0.95), SHR@5 {real['SHR@5']:.3f} (>= 0.90), "
                      f"shuffled 1st_HR@5 {fake['1st_HR@5']:.3f} (<= 0.15), "
                      f"best epochs {log_real.best_epoch}/{log_fake.best_epoch}, {elapsed:.0f}s (< 900s)")
    assert ok


def test_09_metric_oracle(acceptance_report):
    preds, truths = metric_fixture()
    rep = evaluate(preds, truths, 3, (5, 10))
    worst = max(abs((rep.step[k] if len(k) == 3 else rep.aggregate[k]) - v) for k, v in METRIC_EXPECTED.items())
    rng = np.random.default_rng(0)
    violations = 0
    for _ in range(1000):
        k, users = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        p, t = [], []
        for _ in range(users):
            t.append(FutureTarget(rng.integers(1, 15, size=k).tolist()))
            p.append([RankedStepList(j + 1, tuple(rng.permutation(14)[: int(rng.integers(0, 13))] + 1)) for j in range(k)])
        r = evaluate(p, t, k, (5, 10))
        for K in (5, 10):
            violations += r.aggregate[("SHR", K)] > r.aggregate[("MHR", K)]
            violations += sum(r.step[("HR", K, j)] < r.step[("NDCG", K, j)] for j in range(1, k + 1))
    ok = worst <= 1e-12 and violations == 0
    acceptance_report(9, "metric oracle", ok,
                      f"fixture max abs err {worst:.1e} (<= 1e-12), {violations} SHR>MHR / HR<NDCG violations in 1000 cases")
    assert ok


DETERMINISM_CONFIG = {
    "data": {"k": 2, "max_history_items": 8},
    "codec": {"level_sizes": [4, 4, 4], "latent_dim": 8, "hidden": [32], "epochs": 10},
    "model": {"enc_layers": 1, "dec_layers": 1, "hidden": 32, "ff_dim": 64, "heads": 4, "dropout": 0.1},
    "train": {"lr": 1e-3, "max_epochs": 6, "warmup_epochs": 3, "patience": 2},
    "eval": {"beam_size": 8},
}


def pipeline(tmp: Path, name: str, log: Path) -> Path:
    cfg = json.loads(json.dumps(DETERMINISM_CONFIG))
    cfg["data"]["path"] = str(log)
    path = tmp / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out = tmp / name
    for cmd in ("prepare", "train-codes", "train-gen", "evaluate"):
        subprocess.run([sys.executable, "-m", "gcb.cli", "--config", str(path), "--out", str(out), "--quiet",
                        "--seed", "7", cmd], check=True)
    return out


def test_10_determinism(acceptance_report, tmp_path):
    log = make_corpus(num_users=60, num_items=40, num_categories=4, seed=3).write_jsonl(tmp_path / "log.jsonl")
    a, b = pipeline(tmp_path, "a", log), pipeline(tmp_path, "b", log)
    same = {
        "codemap.csv": (a / "codemap.csv").read_bytes() == (b / "codemap.csv").read_bytes(),
        "codec params": param_digest(load_codec(a / "codec.npz")[0]) == param_digest(load_codec(b / "codec.npz")[0]),
        "generator params": param_digest(load_generator(a / "generator.npz")[0])
        == param_digest(load_generator(b / "generator.npz")[0]),
    }
    for f in ("metrics.csv", "metrics.json", "predictions.jsonl", "splits.jsonl", "train_log.csv"):
        same[f] = (a / f).read_bytes() == (b / f).read_bytes()
    ok = all(same.values())
    differing = [k for k, v in same.items() if not v]
    acceptance_report(10, "determinism across two full pipeline runs", ok,
                      f"{len(same) - len(differing)}/{len(same)} artifacts identical" + (f", differ: {differing}" if differing else ""))
    assert ok


def popularity_hr(train_examples, test_examples, K: int) -> float:
    counts = Counter()
    for e in train_examples:
        counts.update(e.input_items)
        counts.update(e.target.items)
    top = [i for i, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:K]]
    preds = [[RankedStepList(1, tuple(top))] for _ in test_examples]
    return step_hr(preds, [e.target for e in test_examples], 1, K)


def amazon_log():
    """A real Amazon-format file from GCB_AMAZON_PATH if given, else a synthetic one."""
    path = os.environ.get("GCB_AMAZON_PATH")
    if path:
        fmt = "tsv" if path.endswith((".tsv", ".txt")) else "jsonl"
        with open(path, "rb") as fh:
            return data_ingest.parse_interactions(fh, fmt), Path(path).name
    corpus = make_corpus(num_users=6000, num_items=600, num_categories=12, min_len=5, max_len=15, seed=11)
    return data_ingest.parse_interactions(
        "\n".join(json.dumps(r) for r in corpus.records)), "synthetic Amazon-format corpus"


def test_11_relative_ordering_smoke(acceptance_report):
    k = 1
    raw, source = amazon_log()
    log = data_ingest.filter_users(raw, k)
    users = sorted(log.histories)
    rng = np.random.default_rng(0)
    if len(users) > 5000:
        users = sorted(rng.choice(users, size=5000, replace=False).tolist())
    log = data_ingest.filter_users(data_ingest.InteractionLog({u: log.histories[u] for u in users}, log.item_keys,
                                                              log.categories), k)
    examples = data_ingest.split_leave_k(log, k)
    tr, va, te = (data_ingest.by_segment(examples, s) for s in data_ingest.SEGMENTS)

    feats = ItemFeatures.random(log.catalog_size, 64, seed=0)
    ccfg = CodecConfig(level_sizes=[16, 16, 16], epochs=30, seed=0)
    codec, _ = train_rqvae(feats, ccfg)
    cm = assign_semantic_ids(item_codes(codec, feats), ccfg.level_sizes)
    vocab = Vocabulary.from_codemap(cm)
    mcfg = ModelConfig(vocab_size=vocab.size, enc_layers=2, dec_layers=2, hidden=64, ff_dim=256, heads=4, dropout=0.1,
                       max_src_len=20 * vocab.code_len, max_tgt_len=k * vocab.code_len + 1, seed=0)
    tcfg = TrainConfig(lr=1e-3, batch_size=64, max_epochs=10, warmup_epochs=5, patience=2, seed=0)
    model, _ = train(tr, va[:500], cm, vocab, mcfg, tcfg)
    preds = predict(model, te, cm, vocab, k, beam_size=20, K=10, max_src_len=mcfg.max_src_len)
    gcb_hr = step_hr(preds, [e.target for e in te], 1, 10)
    pop_hr = popularity_hr(tr, te, 10)
    acceptance_report(11, "relative ordering vs popularity (report-only)", gcb_hr > pop_hr,
                      f"{source}, {len(te)} users: GCB 1st_HR@10 {gcb_hr:.4f} vs popularity {pop_hr:.4f}",
                      binding=False)
