"""Run configuration: YAML key-value file -> ``RunConfig``."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import yaml

from ..errors import ConfigError, DataError
from .model import ABLATIONS, CYCLE_ORDERS, ENCODER_INPUTS, ModelConfig


@dataclass
class RunConfig:
    data_dir: str = "data"
    # model
    num_classes: Optional[int] = None  # taken from mapping.txt when unset
    feat_dim: Optional[int] = None  # taken from the feature files when unset
    tcn_layers: int = 10
    tcn_width: int = 64
    hidden: int = 512
    heads: int = 8
    encoder_input: Optional[str] = None  # overrides the ablation's choice
    cycle_order: str = "forward"
    max_steps: int = 20
    dtype: str = "float32"
    # training
    epochs: int = 80
    lr: float = 0.001
    lr_decay: float = 0.8
    lr_step: int = 20
    seed: int = 0
    ablation: str = "full"
    two_step: bool = False
    train_obs_fracs: List[float] = field(default_factory=lambda: [0.2, 0.3])
    # evaluation
    obs_fracs: List[float] = field(default_factory=lambda: [0.2, 0.3])
    pred_fracs: List[float] = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.5])

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {sorted(ABLATIONS)}")
        if self.encoder_input is not None and self.encoder_input not in ENCODER_INPUTS:
            raise ConfigError(f"encoder_input must be one of {ENCODER_INPUTS}")
        if self.cycle_order not in CYCLE_ORDERS:
            raise ConfigError(f"cycle_order must be one of {CYCLE_ORDERS}")
        if self.hidden % self.heads:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.lr <= 0 or self.lr_step < 1:
            raise ConfigError("lr must be positive and lr_step >= 1")

    def model_config(self, num_classes: Optional[int] = None, feat_dim: Optional[int] = None) -> ModelConfig:
        C = self.num_classes or num_classes
        D = self.feat_dim or feat_dim
        if C is None or D is None:
            raise ConfigError("num_classes and feat_dim must be known")
        base = ModelConfig(
            num_classes=C,
            feat_dim=D,
            tcn_layers=self.tcn_layers,
            tcn_width=self.tcn_width,
            hidden=self.hidden,
            heads=self.heads,
            cycle_order=self.cycle_order,
            max_steps=self.max_steps,
            dtype=self.dtype,
        ).with_ablation(self.ablation)
        if self.encoder_input is not None:
            base = dataclasses.replace(base, encoder_input=self.encoder_input)
        return base

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


def config_from_dict(d: dict) -> RunConfig:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        return RunConfig(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        d = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise DataError(f"{path}: cannot read config ({exc.strerror})") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: config must be a key-value mapping")
    cfg = config_from_dict(d)
    data = Path(cfg.data_dir)
    if not data.is_absolute():
        cfg = cfg.replace(data_dir=str((path.parent / data).resolve()))
    return cfg


def dump_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=False))
