"""Semantic-ID learning: k-means, residual quantization, the RQ-VAE and code maps."""

from .gradcheck import rqvae_grad_check, toy_codec
from .kmeans import DegenerateInputWarning, KMeansError, KMeansResult, kmeans
from .model import (
    CodecConfig,
    CodecHistory,
    EncoderDecoder,
    ItemFeatures,
    NonFiniteLoss,
    RQVAE,
    encode_items,
    item_codes,
    load_codec,
    rqvae_loss,
    save_codec,
    train_rqvae,
)
from .quantize import CodebookError, Codebooks, QuantizationResult, init_codebooks, quantize, quantize_batch, utilization
from .semantic_ids import ClusterReport, CodeMap, NoCategories, UNKNOWN_CATEGORY, analyze_hierarchy, assign_semantic_ids

__all__ = [
    "ClusterReport",
    "CodeMap",
    "CodebookError",
    "Codebooks",
    "CodecConfig",
    "CodecHistory",
    "DegenerateInputWarning",
    "EncoderDecoder",
    "ItemFeatures",
    "KMeansError",
    "KMeansResult",
    "NoCategories",
    "NonFiniteLoss",
    "QuantizationResult",
    "RQVAE",
    "UNKNOWN_CATEGORY",
    "analyze_hierarchy",
    "assign_semantic_ids",
    "encode_items",
    "init_codebooks",
    "item_codes",
    "kmeans",
    "load_codec",
    "quantize",
    "quantize_batch",
    "rqvae_grad_check",
    "rqvae_loss",
    "save_codec",
    "toy_codec",
    "train_rqvae",
    "utilization",
]
