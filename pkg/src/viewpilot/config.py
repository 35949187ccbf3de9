"""Declarative run configuration: one JSON file covering scene generation,
model dimensions, training, data splits, and evaluation.

Parsing is strict: unknown keys anywhere are rejected, every field has a
default, and dotted-path overrides (``train.lr_initial=0.01``) are
type-checked against the target field.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .agent import ModelDims
from .errors import ConfigError
from .observation import SceneConfig
from .training import TrainConfig


@dataclass(frozen=True)
class ModelConfig:
    selector_hidden: int = 32
    regressor_hidden: int = 8


@dataclass(frozen=True)
class DataConfig:
    seed: int = 2026
    train_count: int = 50
    test_count: int = 10


@dataclass(frozen=True)
class EvalConfig:
    grid_step: float = 30.0
    dp_smooth_weight: float = 1.0
    h_span: float = 65.5
    sweep_slots: tuple = (8, 16, 32)
    jobs: int = 1


@dataclass(frozen=True)
class PathsConfig:
    out_dir: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def dims(self) -> ModelDims:
        return ModelDims(
            appearance_dim=self.scene.appearance_dim,
            motion_bins=self.scene.motion_bins,
            slots=self.scene.slots,
            selector_hidden=self.model.selector_hidden,
            regressor_hidden=self.model.regressor_hidden,
        )


_SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(value, target_type, path: str):
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if target_type is tuple:
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) for v in value):
            raise ConfigError(f"{path}: expected a list of integers, got {value!r}")
        return tuple(value)
    raise ConfigError(f"{path}: unsupported field type {target_type}")


def _parse_section(cls, mapping: dict, section: str):
    if not isinstance(mapping, dict):
        raise ConfigError(f"section {section!r} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(mapping) - set(fields)
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    kwargs = {}
    for key, value in mapping.items():
        target = fields[key].type
        if isinstance(target, str):  # dataclass fields carry annotation strings
            target = {"int": int, "float": float, "bool": bool, "str": str, "tuple": tuple}[target]
        kwargs[key] = _coerce(value, target, f"{section}.{key}")
    try:
        return cls(**kwargs)
    except Exception as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def parse_run_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration root must be an object")
    unknown = set(doc) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown configuration sections: {sorted(unknown)}")
    kwargs = {}
    for name, f in _SECTIONS.items():
        cls = f.default_factory
        if name in doc:
            kwargs[name] = _parse_section(cls, doc[name], name)
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_run_config(doc)


def apply_overrides(config: RunConfig, overrides: list[str]) -> RunConfig:
    """Apply ``section.key=value`` overrides; values parse as JSON scalars."""
    doc = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        path, raw = item.split("=", 1)
        parts = path.split(".")
        if len(parts) != 2:
            raise ConfigError(f"override path {path!r} must be section.key")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw  # bare strings allowed
        doc.setdefault(parts[0], {})[parts[1]] = value

    merged = {}
    for name in _SECTIONS:
        section = getattr(config, name)
        merged[name] = {f.name: getattr(section, f.name) for f in dataclasses.fields(section)}
        merged[name] = {
            k: (list(v) if isinstance(v, tuple) else v) for k, v in merged[name].items()
        }
    for name, section_doc in doc.items():
        if name not in merged:
            raise ConfigError(f"unknown configuration sections: [{name!r}]")
        merged[name].update(section_doc)
    return parse_run_config(merged)
