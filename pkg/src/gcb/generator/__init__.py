"""Encoder-decoder generator over Semantic-ID tokens."""

from .gradcheck import GradMismatch, GradReport, grad_check
from .model import (
    ContextStates,
    ModelConfig,
    Seq2Seq,
    ShapeMismatch,
    build_model,
    load_generator,
    nll_loss,
    param_digest,
    save_generator,
)
from .train import EncodedSplit, NonFiniteLoss, TrainConfig, TrainLog, teacher_forced_loss, train

__all__ = [
    "ContextStates",
    "EncodedSplit",
    "GradMismatch",
    "GradReport",
    "ModelConfig",
    "NonFiniteLoss",
    "Seq2Seq",
    "ShapeMismatch",
    "TrainConfig",
    "TrainLog",
    "build_model",
    "grad_check",
    "load_generator",
    "nll_loss",
    "param_digest",
    "save_generator",
    "teacher_forced_loss",
    "train",
]
