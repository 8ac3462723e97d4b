"""Command-line pipeline: prepare, train-codes, train-gen, evaluate, analyze."""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import data_ingest
from .beam_decoder import predict, write_predictions
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .data_model import GCBError
from .generator import ModelConfig, TrainConfig, load_generator, param_digest, save_generator, train
from .metrics import evaluate
from .rq_codec import (
    CodecConfig,
    CodeMap,
    ItemFeatures,
    analyze_hierarchy,
    assign_semantic_ids,
    item_codes,
    load_codec,
    save_codec,
    train_rqvae,
    utilization,
)
from .tokenizer import Vocabulary

logger = logging.getLogger("gcb")

SPLITS = "splits.jsonl"
ITEMS = "items.csv"
STATS = "stats.json"
CODEC = "codec.npz"
CODEMAP = "codemap.csv"
CODEC_LOG = "codec_history.csv"
GENERATOR = "generator.npz"
TRAIN_LOG = "train_log.csv"
METRICS_CSV = "metrics.csv"
METRICS_JSON = "metrics.json"
PREDICTIONS = "predictions.jsonl"
CLUSTERS = "clusters.csv"


@contextlib.contextmanager
def atomic_write(path: Path, mode: str = "w"):
    """Write to a temp file beside ``path`` and rename it into place on success."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"encoding": "utf-8", "newline": ""})) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


@contextlib.contextmanager
def atomic_path(path: Path):
    """Yield a temp path beside ``path``; rename it into place on success."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise CheckpointError(f"{what} not found at {path}; run the earlier pipeline stage first")
    return path


def _seeds(cfg: RunConfig) -> dict:
    return asdict(cfg.seeds)


def _configure_torch() -> None:
    torch.use_deterministic_algorithms(True)


# ------------------------------------------------------------------ prepare

def cmd_prepare(cfg: RunConfig) -> dict:
    out = Path(cfg.out_dir)
    src = Path(cfg.data.path)
    if not cfg.data.path or not src.exists():
        raise ConfigError(f"data.path does not exist: {cfg.data.path!r}")
    fmt = cfg.data_format()
    with open(src, "rb") as fh:
        try:
            log = data_ingest.parse_interactions(fh, fmt)
        except data_ingest.IngestError as exc:
            raise data_ingest.IngestError(f"{src}: {exc}") from exc
    k = cfg.data.k
    filtered = data_ingest.filter_users(log, k)
    examples = data_ingest.split_leave_k(filtered, k, cfg.data.split_scheme, cfg.data.augment)
    stats = {
        "k": k,
        "min_interactions": data_ingest.min_history_length(k),
        "users_before": len(log.histories),
        "items_before": log.catalog_size,
        "interactions_before": log.num_interactions,
        "users_after": len(filtered.histories),
        "items_after": filtered.catalog_size,
        "interactions_after": filtered.num_interactions,
        "examples": {seg: len(data_ingest.by_segment(examples, seg)) for seg in data_ingest.SEGMENTS},
        "seeds": _seeds(cfg),
    }
    with atomic_write(out / SPLITS) as fh:
        data_ingest.write_splits(examples, fh)
    with atomic_write(out / ITEMS) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "raw_key", "category"])
        for i, key in enumerate(filtered.item_keys, start=1):
            w.writerow([i, key, filtered.categories.get(i, "")])
    with atomic_write(out / STATS) as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info(
        "users %d -> %d, items %d -> %d (need >= %d interactions)",
        stats["users_before"], stats["users_after"], stats["items_before"], stats["items_after"],
        stats["min_interactions"],
    )
    return stats


def read_items(out: Path) -> tuple[list[str], dict[int, str]]:
    keys, cats = [], {}
    with open(_require(out / ITEMS, "item table"), newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["item_id"])
            keys.append(row["raw_key"])
            if row["category"]:
                cats[i] = row["category"]
    return keys, cats


def read_examples(out: Path) -> list[data_ingest.SplitExample]:
    with open(_require(out / SPLITS, "splits"), encoding="utf-8") as fh:
        return data_ingest.read_splits(fh)


# -------------------------------------------------------------- train-codes

def load_features(cfg: RunConfig, keys: list[str]) -> ItemFeatures:
    """Item features in ItemId order.

    A ``.npy`` file must already be row-aligned with ``items.csv``; an ``.npz``
    file carries ``keys`` and ``features`` and is re-ordered by raw item key.
    """
    path = cfg.data.features_path
    if not path:
        return ItemFeatures.random(len(keys), cfg.data.feature_dim, seed=cfg.seeds.data)
    if not Path(path).exists():
        raise ConfigError(f"data.features_path does not exist: {path!r}")
    if path.endswith(".npz"):
        with np.load(path) as data:
            row = {str(k): i for i, k in enumerate(data["keys"])}
            missing = [k for k in keys if k not in row]
            if missing:
                raise ConfigError(f"features file lacks {len(missing)} items, e.g. {missing[0]!r}")
            feats = ItemFeatures(data["features"][[row[k] for k in keys]], source=f"file({Path(path).name})")
    else:
        feats = ItemFeatures.load(path)
    if feats.matrix.shape[0] != len(keys):
        raise ConfigError(f"features file has {feats.matrix.shape[0]} rows for {len(keys)} items")
    return feats


def codec_config(cfg: RunConfig, feature_dim: int) -> CodecConfig:
    c = cfg.codec
    return CodecConfig(
        level_sizes=list(c.level_sizes), latent_dim=c.latent_dim, hidden=list(c.hidden),
        feature_dim=feature_dim, epochs=c.epochs, lr=c.lr, beta=c.beta, batch_size=c.batch_size,
        kmeans_iters=c.kmeans_iters, seed=cfg.seeds.codec,
    )


def cmd_train_codes(cfg: RunConfig) -> dict:
    out = Path(cfg.out_dir)
    keys, _ = read_items(out)
    feats = load_features(cfg, keys)
    _configure_torch()
    model, history = train_rqvae(feats, codec_config(cfg, feats.matrix.shape[1]))
    level_codes = item_codes(model, feats)
    codemap = assign_semantic_ids(level_codes, list(cfg.codec.level_sizes), cfg.codec.collision_position)
    vocab = Vocabulary.from_codemap(codemap)
    final = history.rows[-1]
    summary = {
        "final_mse": final["mse"],
        "initial_mse": history.rows[0]["mse"],
        "utilization": utilization(level_codes, cfg.codec.level_sizes),
        "collision_width": codemap.vocab_sizes[-1] if cfg.codec.collision_position else 0,
        "params_sha256": param_digest(model),
    }
    extra = {
        "seeds": _seeds(cfg),
        "feature_source": feats.source,
        "vocabulary": vocab.to_dict(),
        "codemap_vocab_sizes": codemap.vocab_sizes,
        "summary": summary,
    }
    with atomic_path(out / CODEC) as tmp:
        save_codec(tmp, model, extra)
    with atomic_write(out / CODEMAP) as fh:
        codemap.to_csv(fh)
    with atomic_write(out / CODEC_LOG) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "total", "recon", "commit", "mse", *(f"util_l{i + 1}" for i in range(len(cfg.codec.level_sizes)))])
        for r in history.rows:
            w.writerow([r["epoch"], repr(r["total"]), repr(r["recon"]), repr(r["commit"]), repr(r["mse"]), *r["utilization"]])
    logger.info("codec: recon MSE %.5f (epoch 0: %.5f); codebook utilization %s of %s",
                summary["final_mse"], summary["initial_mse"], summary["utilization"], list(cfg.codec.level_sizes))
    return summary


def load_codemap(out: Path) -> tuple[CodeMap, Vocabulary, dict]:
    _, meta = load_codec(_require(out / CODEC, "codec checkpoint"))
    with open(_require(out / CODEMAP, "code map"), newline="") as fh:
        codemap = CodeMap.from_csv(fh, meta["codemap_vocab_sizes"])
    vocab = Vocabulary(tuple(meta["vocabulary"]["position_sizes"]))
    return codemap, vocab, meta


# ---------------------------------------------------------------- train-gen

def model_config(cfg: RunConfig, vocab: Vocabulary) -> ModelConfig:
    m = cfg.model
    return ModelConfig(
        vocab_size=vocab.size, enc_layers=m.enc_layers, dec_layers=m.dec_layers, hidden=m.hidden,
        ff_dim=m.ff_dim, heads=m.heads, dropout=m.dropout,
        max_src_len=cfg.data.max_history_items * vocab.code_len,
        max_tgt_len=cfg.data.k * vocab.code_len + 1, seed=cfg.seeds.model,
    )


def train_config(cfg: RunConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        lr=t.lr, batch_size=t.batch_size, max_epochs=t.max_epochs, warmup_epochs=t.warmup_epochs,
        patience=t.patience, eval_every=t.eval_every, val_K=t.val_K, val_beam=t.val_beam,
        max_grad_norm=t.max_grad_norm, seed=cfg.seeds.model,
    )


def cmd_train_gen(cfg: RunConfig) -> dict:
    out = Path(cfg.out_dir)
    examples = read_examples(out)
    codemap, vocab, _ = load_codemap(out)
    _configure_torch()
    mcfg = model_config(cfg, vocab)
    model, log = train(
        data_ingest.by_segment(examples, "train"), data_ingest.by_segment(examples, "valid"),
        codemap, vocab, mcfg, train_config(cfg),
    )
    summary = {
        "best_epoch": log.best_epoch,
        "best_val_metric": log.best_metric,
        "epochs_run": len(log.rows),
        "final_loss": log.rows[-1]["loss"] if log.rows else None,
        "params_sha256": param_digest(model),
    }
    with atomic_path(out / GENERATOR) as tmp:
        save_generator(tmp, model, {"seeds": _seeds(cfg), "epoch": log.best_epoch, "k": cfg.data.k, "summary": summary})
    with atomic_write(out / TRAIN_LOG) as fh:
        log.to_csv(fh)
    logger.info("generator: best epoch %d, val 1st_HR@%d %s", log.best_epoch, cfg.train.val_K, log.best_metric)
    return summary


# ----------------------------------------------------------------- evaluate

def cmd_evaluate(cfg: RunConfig) -> dict:
    out = Path(cfg.out_dir)
    examples = read_examples(out)
    codemap, vocab, _ = load_codemap(out)
    model, meta = load_generator(_require(out / GENERATOR, "generator checkpoint"))
    if model.cfg.vocab_size != vocab.size:
        raise CheckpointError(f"generator vocab {model.cfg.vocab_size} != codec vocab {vocab.size}")
    k = cfg.data.k
    if meta.get("k") not in (None, k):
        raise CheckpointError(f"generator was trained for k={meta['k']}, config has k={k}")
    test = data_ingest.by_segment(examples, "test")
    preds = predict(model, test, codemap, vocab, k, cfg.eval.beam_size, max(cfg.eval.Ks),
                    model.cfg.max_src_len, cfg.eval.batch_size, cfg.eval.constrained)
    report = evaluate(preds, [e.target for e in test], k, cfg.eval.Ks)
    with atomic_write(out / METRICS_CSV) as fh:
        report.to_csv(fh)
    with atomic_write(out / METRICS_JSON) as fh:
        json.dump({"k": k, "users": report.users, "seeds": _seeds(cfg), "beam_size": cfg.eval.beam_size,
                   "metrics": report.named()}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with atomic_write(out / PREDICTIONS) as fh:
        write_predictions(preds, fh)
    for name, value in report.named().items():
        logger.info("%s = %.4f", name, value)
    return report.named()


# ------------------------------------------------------------------ analyze

def cmd_analyze(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    _, categories = read_items(out)
    with open(_require(out / CODEMAP, "code map"), newline="") as fh:
        codemap = CodeMap.from_csv(fh)
    report = analyze_hierarchy(codemap, categories)
    with atomic_write(out / CLUSTERS) as fh:
        report.to_csv(fh)
    logger.info("wrote %d cluster rows to %s", len(report.rows), out / CLUSTERS)
    return len(report.rows)


COMMANDS = {
    "prepare": cmd_prepare,
    "train-codes": cmd_train_codes,
    "train-gen": cmd_train_gen,
    "evaluate": cmd_evaluate,
    "analyze": cmd_analyze,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcb", description=__doc__)
    parser.add_argument("--config", type=Path, help="YAML run configuration")
    parser.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    parser.add_argument("--seed", type=int, help="set the data, codec and model seeds at once")
    parser.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    parser.add_argument("command", choices=sorted(COMMANDS))
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.out_dir = str(args.out)
    if args.seed is not None:
        cfg.seeds.data = cfg.seeds.codec = cfg.seeds.model = args.seed
    cfg.validate()
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(message)s" if not args.quiet else "%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"gcb: config error: {exc}", file=sys.stderr)
        return 2
    except (GCBError, OSError, ValueError) as exc:
        print(f"gcb {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
