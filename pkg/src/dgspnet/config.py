"""Dataclass configuration with JSON loading and dotted-key overrides.

Precedence is ``overrides > file > defaults``. Unknown keys are rejected so a
typo in a config file or a ``--set`` flag fails loudly instead of being
silently ignored.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigurationError

SCENES = ("the", "sky", "ground", "ocean")


@dataclass
class ModelConfig:
    in_channels: int = 1
    widths: list[int] = field(default_factory=lambda: [16, 32, 64, 128, 256])
    dec_width: int = 32
    norm: str = "batch"  # "batch" | "none"
    bridge_heads: int = 4
    tgsa_dim: int = 32
    # prompt engine
    n_tokens: int = 2
    scene: str = "the"
    template: str | None = None  # custom template with <s1>.. markers
    inv_channels: int = 32
    inv_heads: int = 4
    text_dim: int = 64
    text_heads: int = 4
    text_layers: int = 2
    context_length: int = 77
    text_seed: int = 0

    def validate(self) -> None:
        if len(self.widths) != 5:
            raise ConfigurationError(f"widths must list 5 levels, got {self.widths}")
        if any(b < a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigurationError(f"widths must be nondecreasing, got {self.widths}")
        if self.norm not in ("batch", "none"):
            raise ConfigurationError(f"norm must be 'batch' or 'none', got {self.norm!r}")
        if self.scene not in SCENES:
            raise ConfigurationError(f"scene must be one of {SCENES}, got {self.scene!r}")
        if self.template is None and not 0 <= self.n_tokens <= 4:
            raise ConfigurationError(f"n_tokens must be in 0..4, got {self.n_tokens}")
        for name, dim, heads in (
            ("dec_width", self.dec_width, self.bridge_heads),
            ("inv_channels", self.inv_channels, self.inv_heads),
            ("text_dim", self.text_dim, self.text_heads),
        ):
            if dim % heads:
                raise ConfigurationError(f"{name}={dim} not divisible by {heads} heads")


@dataclass
class TrainConfig:
    phase: str = "train"  # "pretrain" | "train"
    epochs: int = 800
    max_steps: int | None = None  # overrides epochs * steps_per_epoch when set
    batch_size: int = 4
    lr: float = 1e-4  # detection phase, polynomially decayed
    pretrain_lr: float = 1e-4
    pretrain_lr_inversion: float = 3e-4
    poly_power: float = 1.2
    weight_decay: float = 0.01
    lambda1: float = 1.0
    lambda2: float = 1.0
    iou_eps: float = 1e-9
    tau: float = 0.07
    contra_weight: float = 1.0
    mse_weight: float = 1.0
    seed: int = 0
    crop: int = 256
    threshold: float = 0.5
    match_radius: float = 3.0
    eval_every: int = 1  # epochs; 0 disables
    ckpt_every: int = 50  # epochs; 0 keeps only last/best
    init_checkpoint: str | None = None
    deterministic: bool = True

    def validate(self) -> None:
        if self.phase not in ("pretrain", "train"):
            raise ConfigurationError(f"phase must be 'pretrain' or 'train', got {self.phase!r}")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError("max_steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.poly_power <= 0:
            raise ConfigurationError("poly_power must be > 0")
        if self.crop % 16:
            raise ConfigurationError(f"crop must be a multiple of 16, got {self.crop}")
        if self.iou_eps < 0 or self.tau <= 0:
            raise ConfigurationError("iou_eps must be >= 0 and tau > 0")
        if not 0 < self.threshold < 1:
            raise ConfigurationError("threshold must lie in (0, 1)")


@dataclass
class DataConfig:
    root: str = "data"
    standardize: bool = False


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "Config":
        self.model.validate()
        self.train.validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Config":
        cfg = cls()
        _merge(cfg, d, prefix="")
        return cfg.validate()


def toy_config() -> Config:
    """Laptop-scale preset: 64x64 crops, narrow widths, short runs."""
    cfg = Config()
    cfg.train.crop = 64
    cfg.train.epochs = 50
    cfg.train.lr = 1e-3
    cfg.train.eval_every = 10
    cfg.train.ckpt_every = 0
    return cfg.validate()


def full_config() -> Config:
    cfg = Config()
    cfg.model.widths = [32, 64, 128, 256, 512]
    cfg.model.dec_width = 64
    cfg.model.tgsa_dim = 64
    cfg.model.inv_channels = 64
    cfg.model.text_dim = 512
    cfg.model.text_heads = 8
    return cfg.validate()


PRESETS = {"toy": toy_config, "full": full_config}


def _merge(obj: Any, d: dict[str, Any], prefix: str) -> None:
    names = {f.name: f for f in dataclasses.fields(obj)}
    for key, value in d.items():
        if key not in names:
            raise ConfigurationError(f"unknown config key {prefix + key!r}")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigurationError(f"{prefix + key!r} must be a mapping")
            _merge(current, value, prefix + key + ".")
        else:
            setattr(obj, key, value)


def _coerce(raw: str, target_type: Any) -> Any:
    # Strings from the command line; JSON syntax first, bare strings as fallback.
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    origin = typing.get_origin(target_type)
    args = typing.get_args(target_type)
    if target_type is float or (origin is typing.Union and float in args):
        if isinstance(value, int) and not isinstance(value, bool):
            return float(value)
    if target_type is str and not isinstance(value, str):
        return raw
    return value


def apply_overrides(cfg: Config, overrides: list[str]) -> Config:
    """Apply ``section.key=value`` strings in order."""
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        obj: Any = cfg
        for part in parts[:-1]:
            if not dataclasses.is_dataclass(obj) or not hasattr(obj, part):
                raise ConfigurationError(f"unknown config key {dotted!r}")
            obj = getattr(obj, part)
        leaf = parts[-1]
        fields = {f.name: f for f in dataclasses.fields(obj)} if dataclasses.is_dataclass(obj) else {}
        if leaf not in fields or dataclasses.is_dataclass(getattr(obj, leaf)):
            raise ConfigurationError(f"unknown config key {dotted!r}")
        hints = typing.get_type_hints(type(obj))
        setattr(obj, leaf, _coerce(raw, hints[leaf]))
    return cfg.validate()


def load_config(path: str | Path | None = None, overrides: list[str] | None = None,
                preset: str = "toy", base_overrides: list[str] | None = None) -> Config:
    """Preset defaults, then ``base_overrides``, then the JSON file, then ``overrides``."""
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = apply_overrides(PRESETS[preset](), base_overrides or [])
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            _merge(cfg, json.load(fh), prefix="")
    return apply_overrides(cfg, overrides or [])
