"""Run configuration: a JSON document with sections ``variant``, ``model``,
``train``, ``schedule``, ``rigl``, ``data`` and ``output``.

Every key has a default; unknown keys are rejected.  Validation happens on
load, before any training starts.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .rigl import RiglConfig
from .schedules import ScheduleConfig, ScheduleError

VARIANTS = ("baseline", "dropout", "pruned", "dynamic", "rigl", "fused")
GATED_VARIANTS = ("dynamic", "fused")
MASKED_VARIANTS = ("rigl", "fused")


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


@dataclass
class ModelConfig:
    dims: list[int] = field(default_factory=lambda: [784, 256, 10])
    gate_mode: str = "static"  # static | dynamic | none
    gate_input: bool = True
    gate_hidden: bool = True
    gate_policy: str = "threshold"  # threshold | topk
    topk_k: list[int | None] | None = None  # one entry per gate slot
    cost_weights: list[list[float] | None] | None = None


@dataclass
class TrainSettings:
    epochs: int = 10
    batch_size: int = 128
    seed: int = 0
    lr: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gate_lr: float | None = None  # defaults to lr
    gate_forward: str = "hard"  # hard (STE) | soft
    dropout: float = 0.2
    prune_fraction: float = 0.3
    prune_epoch: int | None = None  # epoch after which to prune; default T // 2
    collapse_abort_epochs: int = 3  # 0 disables the abort


@dataclass
class DataConfig:
    source: str = "mnist"  # mnist | blobs
    data_dir: str | None = None
    standardize: bool = False
    n_per_class: int = 300
    classes: int = 4
    dim: int = 16
    spread: float = 1.0
    center_scale: float = 1.0
    n_informative: int | None = None
    test_fraction: float = 0.25
    data_seed: int = 1234


@dataclass
class OutputConfig:
    out_dir: str = "runs/out"
    checkpoint: str = "model.ckpt"
    metrics: str = "metrics.jsonl"
    summary: str = "summary.json"


@dataclass
class RunConfig:
    variant: str = "baseline"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    rigl: RiglConfig = field(default_factory=RiglConfig)
    data: DataConfig = field(default_factory=DataConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @property
    def gated(self) -> bool:
        return self.variant in GATED_VARIANTS and self.model.gate_mode != "none"

    @property
    def masked(self) -> bool:
        return self.variant in MASKED_VARIANTS

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainSettings,
    "schedule": ScheduleConfig,
    "rigl": RiglConfig,
    "data": DataConfig,
    "output": OutputConfig,
}


def _build(cls, section: str, values) -> object:
    if not isinstance(values, dict):
        raise ConfigError(f"{section}: expected an object, got {type(values).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError, ScheduleError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    unknown = sorted(set(doc) - set(_SECTIONS) - {"variant"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    doc = dict(doc)
    sched = dict(doc.get("schedule", {}))
    if isinstance(sched, dict) and "total_epochs" not in sched:
        epochs = doc.get("train", {}).get("epochs", TrainSettings.epochs)
        sched["total_epochs"] = epochs
        doc["schedule"] = sched
    kwargs = {name: _build(cls, name, doc.get(name, {})) for name, cls in _SECTIONS.items()}
    cfg = RunConfig(variant=doc.get("variant", "baseline"), **kwargs)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"variant: must be one of {VARIANTS}, got {cfg.variant!r}")
    m, t, s = cfg.model, cfg.train, cfg.schedule
    if len(m.dims) < 2 or any(int(d) < 1 for d in m.dims):
        raise ConfigError(f"model.dims: need >= 2 positive widths, got {m.dims}")
    if m.gate_mode not in ("static", "dynamic", "none"):
        raise ConfigError(f"model.gate_mode: must be static, dynamic or none, got {m.gate_mode!r}")
    if m.gate_policy not in ("threshold", "topk"):
        raise ConfigError(f"model.gate_policy: must be threshold or topk, got {m.gate_policy!r}")
    n_slots = len(m.dims) - 1
    if m.gate_policy == "topk":
        if m.topk_k is None or len(m.topk_k) != n_slots:
            raise ConfigError(f"model.topk_k: need {n_slots} entries for topk gating")
        for k, kk in enumerate(m.topk_k):
            if kk is not None and not 1 <= kk <= m.dims[k]:
                raise ConfigError(f"model.topk_k[{k}]: must be in [1, {m.dims[k]}], got {kk}")
    if m.cost_weights is not None:
        if len(m.cost_weights) != n_slots:
            raise ConfigError(f"model.cost_weights: need {n_slots} entries (null for ungated)")
        for k, c in enumerate(m.cost_weights):
            if c is None:
                continue
            if len(c) != m.dims[k]:
                raise ConfigError(f"model.cost_weights[{k}]: need {m.dims[k]} values")
            if any(v <= 0 for v in c):
                raise ConfigError(f"model.cost_weights[{k}]: costs must be positive")
    if t.epochs < 1 or t.batch_size < 1:
        raise ConfigError("train.epochs and train.batch_size must be >= 1")
    if t.lr <= 0 or t.weight_decay < 0:
        raise ConfigError("train.lr must be > 0 and train.weight_decay >= 0")
    if t.gate_forward not in ("hard", "soft"):
        raise ConfigError(f"train.gate_forward: must be hard or soft, got {t.gate_forward!r}")
    if not 0.0 <= t.dropout < 1.0:
        raise ConfigError(f"train.dropout: rate must be in [0, 1), got {t.dropout}")
    if not 0.0 <= t.prune_fraction < 1.0:
        raise ConfigError(f"train.prune_fraction: must be in [0, 1), got {t.prune_fraction}")
    if t.prune_epoch is not None and not 0 <= t.prune_epoch <= t.epochs:
        raise ConfigError("train.prune_epoch: must lie in [0, epochs]")
    if s.total_epochs != t.epochs:
        raise ConfigError(
            f"schedule.total_epochs ({s.total_epochs}) must equal train.epochs ({t.epochs})")
    if cfg.data.source not in ("mnist", "blobs"):
        raise ConfigError(f"data.source: must be mnist or blobs, got {cfg.data.source!r}")
    if cfg.masked:
        from .rigl import mask_budget
        for n_in, n_out in zip(m.dims[:-1], m.dims[1:]):
            if mask_budget((n_out, n_in), cfg.rigl.sparsity) == 0:
                raise ConfigError(
                    f"rigl.sparsity: {cfg.rigl.sparsity} leaves no connections in a "
                    f"{n_out}x{n_in} layer")


def load_config(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(doc)


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """New config with section dicts merged in, e.g. ``train={"seed": 3}``."""
    doc = cfg.to_dict()
    for name, values in sections.items():
        if name == "variant":
            doc["variant"] = values
        else:
            doc[name].update(values)
    if "epochs" in sections.get("train", {}) and "total_epochs" not in sections.get("schedule", {}):
        doc["schedule"]["total_epochs"] = sections["train"]["epochs"]
    return from_dict(doc)
