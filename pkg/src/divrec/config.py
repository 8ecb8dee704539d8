"""Flat ``key=value`` run configuration shared by the model and the trainer."""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path
from typing import Mapping

from .model import ModelConfig
from .training import TrainingConfig

ALIASES = {"lambda": "lam"}
_DESK_MODEL = dict(embed_dim=32, model_dim=32, heads=4, pool_dim=16, max_title_len=30, max_history_len=20)
_DESK_TRAIN = dict(lam=20.0, epochs=3, lr=1e-3)


class ConfigError(ValueError):
    pass


def read_config_file(path) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        raw[key.strip()] = value.strip()
    return raw


def _coerce(name: str, kind: str, value: str):
    try:
        if kind == "bool":
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"field {name!r}: cannot read {value!r} as {kind}") from None


def resolve(raw: Mapping[str, str], overrides: Mapping[str, str] | None = None) -> tuple[ModelConfig, TrainingConfig]:
    """Desk-scale defaults <- file values <- overrides; unknown keys and bad values name the field."""
    merged = {ALIASES.get(k, k): v for k, v in raw.items()}
    merged.update({ALIASES.get(k, k): v for k, v in (overrides or {}).items()})
    model_kinds = {f.name: f.type for f in fields(ModelConfig)}
    train_kinds = {f.name: f.type for f in fields(TrainingConfig)}
    model_kw: dict = dict(_DESK_MODEL)
    train_kw: dict = dict(_DESK_TRAIN)
    for key, value in merged.items():
        if key in model_kinds:
            model_kw[key] = _coerce(key, model_kinds[key], value)
        elif key in train_kinds:
            train_kw[key] = _coerce(key, train_kinds[key], value)
        else:
            raise ConfigError(f"unknown config field {key!r}")
    try:
        return ModelConfig(**model_kw), TrainingConfig(**train_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def dump(model: ModelConfig, training: TrainingConfig) -> str:
    lines = [f"{f.name}={getattr(model, f.name)}" for f in fields(model)]
    lines += [f"{f.name}={getattr(training, f.name)}" for f in fields(training)]
    return "\n".join(lines) + "\n"
