"""Model and training configuration.

Every architectural and optimization hyperparameter is an explicit named
field. Config files are plain ``key = value`` lines mirroring the field
names; unknown keys are errors. Two presets exist: ``paper`` (the published
hyperparameters) and ``desk`` (shrunken dimensions and epoch counts for
laptop-scale runs; optimization constants unchanged).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields


class ConfigError(ValueError):
    """Invalid configuration value, key, or combination."""


@dataclass
class ModelConfig:
    seq_len: int = 256  # aligned input length L
    patch_len: int = 8  # P; N = seq_len // patch_len
    d_model: int = 128  # D
    depth: int = 5  # encoder blocks
    cms_levels: int = 4
    chunk_size: int = 8
    ffn_mult: int = 4
    d_proj: int = 64  # contrastive projection width
    num_features: int = 8  # K
    num_classes: int = 0  # set when a labeled dataset is attached
    dropout: float = 0.1  # backbone blocks
    head_dropout: float = 0.4  # hybrid classifier head
    revin_eps: float = 1e-5

    @property
    def n_patches(self) -> int:
        return self.seq_len // self.patch_len

    def validate(self) -> None:
        if self.seq_len < self.patch_len:
            raise ConfigError(f"seq_len {self.seq_len} shorter than patch_len {self.patch_len}")
        for name in ("seq_len", "patch_len", "d_model", "cms_levels", "chunk_size", "ffn_mult", "d_proj"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.depth < 0:
            raise ConfigError("depth must be >= 0")
        if not 0 <= self.dropout < 1 or not 0 <= self.head_dropout < 1:
            raise ConfigError("dropout rates must be in [0, 1)")
        if self.revin_eps <= 0:
            raise ConfigError("revin_eps must be positive")


@dataclass
class TrainConfig:
    pretrain_epochs: int = 50
    pretrain_lr: float = 1e-4
    pretrain_weight_decay: float = 1e-4
    pretrain_batch: int = 128
    lp_epochs: int = 15
    lp_lr: float = 1e-3
    lp_weight_decay: float = 1e-3
    ft_epochs: int = 30
    ft_lr_backbone: float = 1e-5
    ft_lr_head: float = 1e-4
    ft_weight_decay: float = 1e-4
    ft_eta_min: float = 1e-6
    ft_batch: int = 16
    label_smoothing: float = 0.1
    mask_ratio: float = 0.4
    tau: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    clip_norm: float = 1.0  # 0 disables clipping
    seed: int = 0

    def validate(self) -> None:
        for name in ("pretrain_lr", "lp_lr", "ft_lr_backbone", "ft_lr_head", "ft_eta_min", "tau"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.ft_eta_min > min(self.ft_lr_backbone, self.ft_lr_head):
            raise ConfigError("ft_eta_min must not exceed the initial learning rates")
        for name in ("pretrain_epochs", "lp_epochs", "ft_epochs", "pretrain_batch", "ft_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 <= self.mask_ratio < 1:
            raise ConfigError("mask_ratio must be in [0, 1)")
        if not 0 <= self.label_smoothing <= 1:
            raise ConfigError("label_smoothing must be in [0, 1]")
        if self.lambda1 < 0 or self.lambda2 < 0 or (self.lambda1 == 0 and self.lambda2 == 0):
            raise ConfigError("lambda1/lambda2 must be non-negative and not both zero")
        if self.clip_norm < 0:
            raise ConfigError("clip_norm must be >= 0 (0 disables)")


def paper_preset() -> tuple[ModelConfig, TrainConfig]:
    return ModelConfig(), TrainConfig()


def desk_preset() -> tuple[ModelConfig, TrainConfig]:
    model = ModelConfig(d_model=32, depth=2, d_proj=16)
    train = TrainConfig(pretrain_epochs=5, pretrain_batch=32, pretrain_lr=1e-3)
    return model, train


PRESETS = {"paper": paper_preset, "desk": desk_preset}


def _coerce(name: str, raw: str, kind: type):
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {name!r}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config_text(text: str, preset: str = "desk") -> tuple[ModelConfig, TrainConfig]:
    """Parse ``key = value`` lines on top of a preset; unknown keys are errors."""
    entries: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected key = value, got {line!r}")
        key, _, value = stripped.partition("=")
        entries[key.strip()] = value.strip()

    if "preset" in entries:
        preset = entries.pop("preset")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}, choose from {sorted(PRESETS)}")
    model, train = PRESETS[preset]()

    model_fields = {f.name: f.type for f in fields(ModelConfig)}
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    kinds = {"int": int, "float": float, "bool": bool, "str": str}
    for key, raw in entries.items():
        if key in model_fields:
            setattr(model, key, _coerce(key, raw, kinds.get(model_fields[key], str)))
        elif key in train_fields:
            setattr(train, key, _coerce(key, raw, kinds.get(train_fields[key], str)))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    model.validate()
    train.validate()
    return model, train


def load_config(path: str | None, preset: str = "desk") -> tuple[ModelConfig, TrainConfig]:
    if path is None:
        model, train = PRESETS[preset]()
        model.validate()
        train.validate()
        return model, train
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), preset=preset)


def dump_config(model: ModelConfig, train: TrainConfig) -> str:
    """Render both configs as the same ``key = value`` format we parse."""
    lines = []
    for cfg in (model, train):
        for f in fields(cfg):
            lines.append(f"{f.name} = {getattr(cfg, f.name)!r}")
    return "\n".join(line.replace("'", "") for line in lines) + "\n"


def config_snapshot(model: ModelConfig, train: TrainConfig) -> dict:
    snap = dataclasses.asdict(model)
    snap.update(dataclasses.asdict(train))
    return snap
