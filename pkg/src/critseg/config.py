"""Run configuration: YAML tree of key/values with dotted-path overrides.

The on-disk schema mirrors the TrainConfig/SceneSpec/ModelConfig/OptimSettings
dataclasses; unknown keys are rejected with a field-level message so typos in
override paths fail loudly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from .synthdata import SceneSpec
from .trainer import ConfigError, ModelConfig, OptimSettings, TrainConfig

_SECTIONS = {"data": SceneSpec, "model": ModelConfig, "optim": OptimSettings}


def default_config() -> dict:
    return config_to_dict(TrainConfig())


def config_to_dict(cfg: TrainConfig) -> dict:
    out = asdict(cfg)
    for key, value in out.items():
        if isinstance(value, tuple):
            out[key] = list(value)
    for section in _SECTIONS:
        out[section] = {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in out[section].items()
        }
    return out


def config_from_dict(tree: dict) -> TrainConfig:
    tree = dict(tree)
    kwargs = {}
    top_fields = {f.name for f in fields(TrainConfig)} - set(_SECTIONS)
    for section, cls in _SECTIONS.items():
        sub = tree.pop(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        allowed = {f.name for f in fields(cls)}
        unknown = set(sub) - allowed
        if unknown:
            raise ConfigError(
                f"unknown keys in config section {section!r}: {sorted(unknown)}"
            )
        try:
            kwargs[section] = cls(**_coerce_tuples(cls, sub))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config section {section!r}: {exc}") from exc
    unknown = set(tree) - top_fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs.update(tree)
    try:
        return TrainConfig(**_coerce_tuples(TrainConfig, kwargs))
    except (TypeError, ConfigError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid config: {exc}") from exc


def _coerce_tuples(cls, kwargs: dict) -> dict:
    tuple_fields = {
        f.name for f in fields(cls) if f.type in ("tuple", tuple) or f.type == "tuple"
    }
    out = dict(kwargs)
    for name in tuple_fields & set(out):
        if isinstance(out[name], list):
            out[name] = tuple(out[name])
    return out


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        tree = yaml.safe_load(f)
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: config must be a mapping at the top level")
    return tree


def serialize_config(tree: dict) -> str:
    return yaml.safe_dump(tree, default_flow_style=False, sort_keys=True)


def save_config(tree: dict, path) -> None:
    Path(path).write_text(serialize_config(tree))


def apply_overrides(tree: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` overrides; values parse as YAML scalars."""
    out = json.loads(json.dumps(tree))  # deep copy of plain data
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        dotted, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = out
        parts = dotted.strip().split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"override path {dotted!r}: no section {part!r}")
            node = node[part]
        node[parts[-1]] = value
    return out


def resolve_config(path=None, overrides=None) -> TrainConfig:
    tree = load_config(path) if path else default_config()
    merged = _merge(default_config(), tree)
    merged = apply_overrides(merged, overrides)
    return config_from_dict(merged)


def _merge(base: dict, update: dict) -> dict:
    out = dict(base)
    for key, value in update.items():
        if key in _SECTIONS and isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **value}
        else:
            out[key] = value
    return out


def config_hash(tree: dict) -> str:
    """Stable under key reordering: canonical JSON, sorted keys."""
    canonical = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
