"""Teacher-forced training with Adam, warm-up without evaluation, and early stopping."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import torch

from ..data_model import GCBError
from ..rq_codec.semantic_ids import CodeMap
from ..tokenizer import PAD, Vocabulary, batch_tokenize, decoder_inputs
from .model import ModelConfig, Seq2Seq, build_model, nll_loss

logger = logging.getLogger(__name__)


class NonFiniteLoss(GCBError, FloatingPointError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite generator loss {value} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 300
    warmup_epochs: int = 50
    patience: int = 10
    eval_every: int = 1
    val_K: int = 10
    val_beam: int = 1  # 1 = greedy decoding
    max_grad_norm: float | None = None
    seed: int = 0

    def validate(self) -> None:
        if self.lr < 0 or self.batch_size < 1 or self.max_epochs < 0 or self.warmup_epochs < 0:
            raise ValueError("invalid training schedule")
        if self.patience < 1 or self.eval_every < 1 or self.val_K < 1 or self.val_beam < 1:
            raise ValueError("patience, eval_every, val_K and val_beam must be >= 1")


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)  # epoch, loss, val_metric (None during warm-up)
    best_epoch: int = 0
    best_metric: float | None = None
    stopped_early: bool = False

    def to_csv(self, fh) -> None:
        fh.write("epoch,loss,val_metric\n")
        for r in self.rows:
            val = "" if r["val_metric"] is None else repr(float(r["val_metric"]))
            fh.write(f"{r['epoch']},{r['loss']!r},{val}\n")


@dataclass
class EncodedSplit:
    src: torch.Tensor
    src_valid: torch.Tensor
    dec_in: torch.Tensor
    tgt: torch.Tensor

    def __len__(self) -> int:
        return len(self.src)

    @classmethod
    def build(cls, examples, codemap: CodeMap, vocab: Vocabulary, max_src_len: int) -> "EncodedSplit":
        src, valid, tgt = batch_tokenize(examples, codemap, vocab, max_src_len)
        return cls(*(torch.as_tensor(a) for a in (src, valid, decoder_inputs(tgt), tgt)))


def teacher_forced_loss(model: Seq2Seq, data: EncodedSplit, batch_size: int = 256) -> float:
    """Mean per-token NLL over a split, without dropout."""
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for s in range(0, len(data), batch_size):
            sl = slice(s, s + batch_size)
            logits = model(data.src[sl], data.src_valid[sl], data.dec_in[sl])
            keep = data.tgt[sl] != PAD
            total += float(nll_loss(logits, data.tgt[sl], keep)) * int(keep.sum())
            count += int(keep.sum())
    return total / max(count, 1)


def first_step_hit_rate(model, examples, codemap, vocab, k, max_src_len, K=10, beam=1) -> float:
    """Validation 1st_HR@K; beam=1 means greedy decoding."""
    from ..beam_decoder import predict
    from ..metrics import step_hr

    preds = predict(model, examples, codemap, vocab, k, beam, K, max_src_len)
    return step_hr(preds, [e.target for e in examples], 1, K)


def train(
    train_examples: Sequence,
    valid_examples: Sequence,
    codemap: CodeMap,
    vocab: Vocabulary,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    evaluate_fn: Callable[[Seq2Seq, int], float] | None = None,
) -> tuple[Seq2Seq, TrainLog]:
    """Fit the generator and return the best-validation weights with the epoch log.

    ``evaluate_fn(model, epoch)`` overrides the default validation metric
    (greedy 1st_HR@K, higher is better).
    """
    if not train_examples:
        raise ValueError("empty training set")
    tcfg.validate()
    model = build_model(mcfg)
    torch.manual_seed(tcfg.seed)
    gen = torch.Generator().manual_seed(tcfg.seed)
    data = EncodedSplit.build(train_examples, codemap, vocab, mcfg.max_src_len)
    k = len(train_examples[0].target.items)
    if evaluate_fn is None and valid_examples:
        def evaluate_fn(m, epoch):
            return first_step_hit_rate(m, valid_examples, codemap, vocab, k, mcfg.max_src_len, tcfg.val_K, tcfg.val_beam)

    opt = torch.optim.Adam(model.parameters(), lr=tcfg.lr, betas=(0.9, 0.999), eps=1e-8)
    log = TrainLog()
    best_state = None
    since_best = 0
    for epoch in range(1, tcfg.max_epochs + 1):
        model.train()
        perm = torch.randperm(len(data), generator=gen)
        total, count = 0.0, 0
        for s in range(0, len(data), tcfg.batch_size):
            idx = perm[s:s + tcfg.batch_size]
            logits = model(data.src[idx], data.src_valid[idx], data.dec_in[idx])
            keep = data.tgt[idx] != PAD
            loss = nll_loss(logits, data.tgt[idx], keep)
            if not torch.isfinite(loss):
                raise NonFiniteLoss(epoch, float(loss))
            opt.zero_grad()
            loss.backward()
            if tcfg.max_grad_norm:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.max_grad_norm)
            opt.step()
            total += float(loss.detach()) * int(keep.sum())
            count += int(keep.sum())
        row = {"epoch": epoch, "loss": total / max(count, 1), "val_metric": None}

        if evaluate_fn is not None and epoch > tcfg.warmup_epochs and (epoch - tcfg.warmup_epochs) % tcfg.eval_every == 0:
            metric = float(evaluate_fn(model, epoch))
            row["val_metric"] = metric
            if log.best_metric is None or metric > log.best_metric:
                log.best_metric, log.best_epoch = metric, epoch
                best_state = copy.deepcopy(model.state_dict())
                since_best = 0
            else:
                since_best += 1
        log.rows.append(row)
        if epoch % 10 == 0 or row["val_metric"] is not None:
            logger.info("epoch %d loss %.4f val %s", epoch, row["loss"], row["val_metric"])
        if since_best >= tcfg.patience:
            log.stopped_early = True
            break

    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        log.best_epoch = log.rows[-1]["epoch"] if log.rows else 0
    model.eval()
    return model, log
