"""Experiment configuration: a flat ``key = value`` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

from ..classifier import ClassifierConfig
from ..models import VARIANTS, BaselinePipeline, PolicyPipeline, SelectionPipeline
from ..policy import RewardConfig
from ..rhythm import ScenarioSpec
from ..selector import SelectorConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    variant: str = "srnn_plus"
    seed: int | None = None
    data: str = ""
    # optimisation
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 100
    accum: int = 8
    patience: int = 20
    val_fraction: float = 0.1
    # selection / regularisation
    m_R: float = 0.25
    lam: float = 4.0
    keep_all: bool = False
    sel_hidden: int = 250
    sel_fc1: int = 50
    sel_layers: int = 2
    sel_activation: str = "relu"
    sel_out_scale: float = 1.0
    sel_warmup_epochs: int = 0
    # RL+
    gamma: float = 1.0
    rl_layers: int = 1
    warmup_epochs: int = 5
    anneal_epochs: int = 10
    baseline_enabled: bool = False
    # classifier
    cls_cell: str = "gru"
    cls_hidden: int = 1024
    cls_fc: int = 100
    cls_update_bias: float = 0.0
    # data handling
    train_stride: int = 1
    train_trim: int = 0
    scenarios: str = "original,s1,s2,s3"
    s3_repeats: int = 5

    def validate(self, require_seed: bool = False) -> "ExperimentConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if require_seed and self.seed is None:
            raise ConfigError("a seed is mandatory for training")
        if self.lr <= 0 or self.epochs < 0 or self.accum < 1 or self.patience < 0:
            raise ConfigError("lr > 0, epochs >= 0, accum >= 1 and patience >= 0 required")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if not 0.0 < self.m_R < 1.0:
            raise ConfigError(f"m_R must lie in (0, 1), got {self.m_R}")
        if self.lam < 0 or self.gamma < 0:
            raise ConfigError("lam and gamma must be >= 0")
        self.scenario_specs()
        return self

    def scenario_specs(self) -> list[ScenarioSpec]:
        base = 0 if self.seed is None else self.seed
        try:
            return [
                ScenarioSpec.parse(s, self.s3_repeats, base) for s in self.scenarios.split(",") if s.strip()
            ]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**values)


def _field_types() -> dict[str, type]:
    out = {}
    for f in fields(ExperimentConfig):
        default = f.default
        out[f.name] = int if f.name == "seed" else type(default)
    return out


FIELD_TYPES = _field_types()


def coerce(key: str, text: str) -> Any:
    if key not in FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if key == "seed" and text.lower() in ("", "none"):
            return None
        return kind(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_config_text(text: str) -> dict[str, Any]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = coerce(key, value)
    return values


def load_config(path, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update(overrides or {})
    return ExperimentConfig.from_dict(values)


def dump_config(config: ExperimentConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        lines.append(f"{key} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"


def build_model(config: ExperimentConfig, input_dim: int, n_classes: int):
    cls_cell = "indrnn" if config.variant == "indrnn" else config.cls_cell
    cls_config = ClassifierConfig(cls_cell, config.cls_hidden, config.cls_fc, n_classes, config.cls_update_bias)
    if config.variant in ("baseline", "indrnn"):
        return BaselinePipeline(cls_config, input_dim)
    if config.variant == "rl_plus":
        sel = SelectorConfig("rnn_plus", config.sel_hidden, config.sel_fc1, 1, config.m_R, config.lam,
                             config.rl_layers, config.sel_activation, config.sel_out_scale)
        return PolicyPipeline(sel, cls_config, input_dim, RewardConfig(config.gamma),
                              config.warmup_epochs, config.anneal_epochs)
    sel = SelectorConfig(config.variant, config.sel_hidden, config.sel_fc1, 1, config.m_R, config.lam,
                         config.sel_layers, config.sel_activation, config.sel_out_scale)
    return SelectionPipeline(sel, cls_config, input_dim, keep_all=config.keep_all,
                             warmup=config.sel_warmup_epochs)
