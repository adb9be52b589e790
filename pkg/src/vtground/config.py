"""Run configuration: a YAML-backed tree of dataclasses with dotted-key overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from .anchors import ANCHOR_METHODS
from .losses import LossWeights


@dataclass
class ModelCfg:
    dim: int = 256


@dataclass
class InteractionCfg:
    layers: int = 2
    heads: int = 8  # head count shared by every attention stage
    local_gate: bool = True
    nonlocal_gate: bool = True
    use_position: bool = True


@dataclass
class EncoderCfg:
    layers: int = 3


@dataclass
class DecoderCfg:
    layers: int = 3
    queries: int = 10


@dataclass
class SaliencyCfg:
    vector_weights: bool = False


@dataclass
class OptimizerCfg:
    lr: float = 1e-4
    weight_decay: float = 1e-4  # applied to non-bias parameters only
    decay_epoch: int = 100
    decay_factor: float = 0.1
    grad_clip: float = 0.1


@dataclass
class TrainCfg:
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    dropout: float = 0.1
    checkpoint_every: int = 50
    eval_every: int = 5
    out_dir: str = "runs/default"


@dataclass
class SyntheticDataCfg:
    n_train: int = 800
    n_val: int = 200
    video_len: list[int] = field(default_factory=lambda: [40, 40])
    text_len: list[int] = field(default_factory=lambda: [4, 12])
    video_dim: int = 64
    text_dim: int = 32
    signal_strength: float = 5.0
    noise_std: float = 0.5
    moments_per_video: list[int] = field(default_factory=lambda: [1, 2])
    distractor_rate: float = 0.1
    concept_pool: int = 16
    seed: int = 0
    clip_duration: float = 2.0


@dataclass
class ManifestSplitCfg:
    annotations: str = ""
    video_features: str = ""
    text_features: str = ""


@dataclass
class ManifestDataCfg:
    splits: dict[str, ManifestSplitCfg] = field(default_factory=dict)
    clip_duration: float = 2.0
    video_dim: int | None = None
    text_dim: int | None = None
    l2_normalize: bool = True


@dataclass
class DataCfg:
    source: str = "synthetic"  # "synthetic" or "manifest"
    synthetic: SyntheticDataCfg = field(default_factory=SyntheticDataCfg)
    manifest: ManifestDataCfg = field(default_factory=ManifestDataCfg)


@dataclass
class RunConfig:
    model: ModelCfg = field(default_factory=ModelCfg)
    interaction: InteractionCfg = field(default_factory=InteractionCfg)
    encoder: EncoderCfg = field(default_factory=EncoderCfg)
    decoder: DecoderCfg = field(default_factory=DecoderCfg)
    saliency: SaliencyCfg = field(default_factory=SaliencyCfg)
    anchor: str = "mean"
    loss: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerCfg = field(default_factory=OptimizerCfg)
    train: TrainCfg = field(default_factory=TrainCfg)
    data: DataCfg = field(default_factory=DataCfg)

    def __post_init__(self):
        if self.anchor not in ANCHOR_METHODS:
            raise ValueError(f"anchor must be one of {ANCHOR_METHODS}, got {self.anchor!r}")


class ConfigError(ValueError):
    pass


def _build(cls, value: Any, path: str):
    if is_dataclass(cls) and isinstance(value, dict):
        known = {f.name: f for f in fields(cls)}
        unknown = set(value) - set(known)
        if unknown:
            raise ConfigError(f"unknown config key(s) under {path or 'root'}: {sorted(unknown)}")
        kwargs = {}
        for name, f in known.items():
            if name not in value:
                continue
            sub_path = f"{path}.{name}" if path else name
            if name == "splits" and cls is ManifestDataCfg:
                kwargs[name] = {
                    k: _build(ManifestSplitCfg, v, f"{sub_path}.{k}") for k, v in value[name].items()
                }
            else:
                kwargs[name] = _build(_field_type(f), value[name], sub_path)
        return cls(**kwargs)
    return value


def _field_type(f):
    # Resolve the dataclass type for nested fields; plain fields pass through.
    t = f.type
    mapping = {
        "ModelCfg": ModelCfg,
        "InteractionCfg": InteractionCfg,
        "EncoderCfg": EncoderCfg,
        "DecoderCfg": DecoderCfg,
        "SaliencyCfg": SaliencyCfg,
        "LossWeights": LossWeights,
        "OptimizerCfg": OptimizerCfg,
        "TrainCfg": TrainCfg,
        "DataCfg": DataCfg,
        "SyntheticDataCfg": SyntheticDataCfg,
        "ManifestDataCfg": ManifestDataCfg,
    }
    if isinstance(t, str):
        return mapping.get(t, object)
    return t if is_dataclass(t) else object


def config_from_dict(d: dict) -> RunConfig:
    return _build(RunConfig, d or {}, "")


def config_to_dict(cfg) -> Any:
    if is_dataclass(cfg):
        out = {}
        for f in fields(cfg):
            v = getattr(cfg, f.name)
            if isinstance(v, dict):
                out[f.name] = {k: config_to_dict(x) for k, x in v.items()}
            else:
                out[f.name] = config_to_dict(v)
        return out
    return cfg


def load_config(path: str | Path) -> RunConfig:
    with open(path) as f:
        return config_from_dict(yaml.safe_load(f) or {})


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=False)


GATE_PRESETS = {
    "none": (False, False),
    "local": (True, False),
    "nonlocal": (False, True),
    "both": (True, True),
}


def apply_override(cfg: RunConfig, key: str, value: Any) -> None:
    """Set one dotted-path config key; `gates` and `seed` are conveniences.

    Unknown keys raise before any training starts.
    """
    if key == "gates":
        if value not in GATE_PRESETS:
            raise ConfigError(f"gates must be one of {sorted(GATE_PRESETS)}, got {value!r}")
        cfg.interaction.local_gate, cfg.interaction.nonlocal_gate = GATE_PRESETS[value]
        return
    if key == "seed":
        cfg.train.seed = int(value)
        return
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        if not is_dataclass(node) or part not in {f.name for f in fields(node)}:
            raise ConfigError(f"unknown config key {key!r}")
        node = getattr(node, part)
    leaf = parts[-1]
    if not is_dataclass(node) or leaf not in {f.name for f in fields(node)}:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(node, leaf)
    if is_dataclass(current):
        raise ConfigError(f"config key {key!r} is a section, not a value")
    setattr(node, leaf, value)


def data_root() -> Path:
    return Path(os.environ.get("VTG_DATA_ROOT", "."))


def resolve_data_path(path: str | Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else data_root() / p
