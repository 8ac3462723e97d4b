"""Run configuration: one YAML file plus ``GCB_<SECTION>_<KEY>`` environment overrides."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .data_model import GCBError


class ConfigError(GCBError, ValueError):
    pass


@dataclass
class DataSection:
    path: str = ""
    format: str = "auto"  # jsonl | tsv | auto (by extension)
    k: int = 1
    split_scheme: str = "nested"
    augment: bool = False
    features_path: str = ""
    feature_dim: int = 64
    max_history_items: int = 20


@dataclass
class CodecSection:
    level_sizes: list[int] = field(default_factory=lambda: [32, 32, 32])
    latent_dim: int = 32
    hidden: list[int] = field(default_factory=lambda: [128, 64])
    epochs: int = 200
    lr: float = 1e-3
    beta: float = 0.25
    batch_size: int = 256
    kmeans_iters: int = 100
    collision_position: bool = True


@dataclass
class ModelSection:
    enc_layers: int = 4
    dec_layers: int = 4
    hidden: int = 128
    ff_dim: int = 1024
    heads: int = 6
    dropout: float = 0.1


@dataclass
class TrainSection:
    lr: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 300
    warmup_epochs: int = 50
    patience: int = 10
    eval_every: int = 1
    val_K: int = 10
    val_beam: int = 1
    max_grad_norm: float | None = None


@dataclass
class EvalSection:
    beam_size: int = 20
    Ks: list[int] = field(default_factory=lambda: [5, 10])
    constrained: bool = False
    batch_size: int = 64


@dataclass
class SeedSection:
    data: int = 0
    codec: int = 0
    model: int = 0


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    codec: CodecSection = field(default_factory=CodecSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    seeds: SeedSection = field(default_factory=SeedSection)
    out_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        d = self.data
        if not isinstance(d.k, int) or d.k < 1:
            raise ConfigError(f"data.k must be an integer >= 1, got {d.k!r}")
        if d.format not in ("auto", "jsonl", "tsv"):
            raise ConfigError(f"data.format must be jsonl, tsv or auto, got {d.format!r}")
        if d.split_scheme not in ("nested", "shared"):
            raise ConfigError(f"data.split_scheme must be nested or shared, got {d.split_scheme!r}")
        if d.max_history_items < 1 or d.feature_dim < 1:
            raise ConfigError("data.max_history_items and data.feature_dim must be >= 1")
        c = self.codec
        if not c.level_sizes or any(not isinstance(k, int) or k < 1 for k in c.level_sizes):
            raise ConfigError(f"codec.level_sizes must be a non-empty list of positive integers, got {c.level_sizes!r}")
        if c.latent_dim < 1 or any(h < 1 for h in c.hidden) or c.epochs < 0 or c.lr < 0 or c.beta < 0:
            raise ConfigError("codec dimensions/epochs/lr/beta out of range")
        m = self.model
        if min(m.enc_layers, m.dec_layers, m.hidden, m.ff_dim, m.heads) < 1 or m.heads > m.hidden:
            raise ConfigError("model sizes must be >= 1 and heads <= hidden")
        if not 0 <= m.dropout < 1:
            raise ConfigError("model.dropout must be in [0, 1)")
        t = self.train
        if t.lr < 0 or t.batch_size < 1 or t.max_epochs < 0 or t.warmup_epochs < 0 or t.patience < 1:
            raise ConfigError("train schedule out of range")
        e = self.eval
        if e.beam_size < 1 or not e.Ks or any(K < 1 for K in e.Ks):
            raise ConfigError("eval.beam_size and eval.Ks must be >= 1")

    def data_format(self) -> str:
        if self.data.format != "auto":
            return self.data.format
        suffixes = Path(self.data.path).suffixes
        return "tsv" if ".tsv" in suffixes or ".txt" in suffixes else "jsonl"


_SECTIONS = {f.name: f.type for f in fields(RunConfig) if f.name != "out_dir"}


def from_mapping(raw: Mapping[str, Any] | None) -> RunConfig:
    cfg = RunConfig()
    for key, value in (raw or {}).items():
        if key == "out_dir":
            cfg.out_dir = str(value)
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, Mapping):
            raise ConfigError(f"section {key!r} must be a mapping")
        section = getattr(cfg, key)
        valid = {f.name for f in fields(section)}
        for k, v in value.items():
            if k not in valid:
                raise ConfigError(f"unknown key {key}.{k}")
            setattr(section, k, v)
    return cfg


def apply_env(cfg: RunConfig, environ: Mapping[str, str] | None = None) -> RunConfig:
    """Override fields from ``GCB_<SECTION>_<KEY>`` variables; values parse as YAML scalars."""
    environ = os.environ if environ is None else environ
    for var, raw in sorted(environ.items()):
        if not var.startswith("GCB_") or var == "GCB_DISABLE_NUMBA":
            continue
        rest = var[4:].lower()
        if rest == "out_dir":
            cfg.out_dir = raw
            continue
        section_name, _, key = rest.partition("_")
        if section_name not in _SECTIONS:
            continue
        section = getattr(cfg, section_name)
        if key not in {f.name.lower() for f in fields(section)}:
            raise ConfigError(f"{var} does not name a config field")
        real = next(f.name for f in fields(section) if f.name.lower() == key)
        if isinstance(getattr(section, real), str):
            setattr(section, real, raw)
            continue
        try:
            setattr(section, real, yaml.safe_load(raw))
        except yaml.YAMLError as exc:
            raise ConfigError(f"{var}: cannot parse {raw!r}") from exc
    return cfg


def load_config(path: str | Path | None, environ: Mapping[str, str] | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return apply_env(from_mapping(raw), environ)
