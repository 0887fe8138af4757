"""Training configuration and TOML config-file loading.

A config file has up to four tables::

    [train]   lr, weight_decay, batch_size, epochs, seed, ...
    [loss]    family, alpha, beta, gamma, eps
    [model]   num_classes, stage_channels, se_reduction, dropout_rate
    [synth]   SynthSpec fields

``CLAIRE_SEED`` and ``CLAIRE_OUT_DIR`` override the seed and checkpoint
directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

import tomli

from ..errors import ConfigError
from ..losses import LossConfig
from ..model import ModelConfig
from ..network import EncoderConfig
from .synthetic import SynthSpec

SEED_ENV = "CLAIRE_SEED"
OUT_DIR_ENV = "CLAIRE_OUT_DIR"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 8
    epochs: int = 50
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    checkpoint_dir: str | None = None
    deterministic: bool = True
    num_threads: int | None = 1
    max_steps: int | None = None

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ConfigError("plateau_factor must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


def _pick(cls, table: dict, where: str) -> dict:
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    return dict(table)


def load_config(path=None, env=None) -> tuple[TrainConfig, SynthSpec]:
    """Parse a TOML config file (or defaults) and apply environment overrides."""
    env = os.environ if env is None else env
    raw = {}
    if path is not None:
        try:
            raw = tomli.loads(Path(path).read_text())
        except (OSError, tomli.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    unknown = set(raw) - {"train", "loss", "model", "synth"}
    if unknown:
        raise ConfigError(f"unknown config tables: {sorted(unknown)}")

    try:
        model_tab = dict(raw.get("model", {}))
        enc = {k: model_tab.pop(k) for k in ("stage_channels", "se_reduction", "dropout_rate")
               if k in model_tab}
        model = ModelConfig(encoder=EncoderConfig(**enc), **_pick(ModelConfig, model_tab, "model"))
        loss = LossConfig(**_pick(LossConfig, raw.get("loss", {}), "loss"))
        train_tab = _pick(TrainConfig, raw.get("train", {}), "train")
        synth_tab = _pick(SynthSpec, raw.get("synth", {}), "synth")
        if SEED_ENV in env:
            train_tab["seed"] = int(env[SEED_ENV])
            synth_tab["seed"] = int(env[SEED_ENV])
        if OUT_DIR_ENV in env:
            train_tab["checkpoint_dir"] = env[OUT_DIR_ENV]
        synth_tab.setdefault("num_classes", model.num_classes)
        synth_tab.setdefault("stages", model.encoder.stages)
        if "class_proportions" not in synth_tab and synth_tab["num_classes"] != 4:
            n = synth_tab["num_classes"]
            synth_tab["class_proportions"] = [0.97 / (n - 1)] * (n - 1) + [0.03]
        synth = SynthSpec(**synth_tab)
        cfg = TrainConfig(loss=loss, model=model, **train_tab)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if synth.num_classes != model.num_classes:
        raise ConfigError(f"synth.num_classes={synth.num_classes} but model.num_classes={model.num_classes}")
    return cfg, synth
