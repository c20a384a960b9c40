"""Experiment configuration: nested dataclasses loaded from strict JSON."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .fingerprint import ExtractionConfig, MappingConfig, modeldiff_recipe
from .reuse import ReuseSpec

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class DatasetSpec:
    kind: str = "synthetic"  # synthetic | csv-pixels | image-directory
    path: str | None = None
    test_path: str | None = None
    num_classes: int = 10
    per_class: int = 200
    test_per_class: int = 60
    image_shape: tuple = (1, 28, 28)
    seed: int = 0
    pattern_seed: int = 1234


@dataclass
class ModelSpec:
    arch: str = "cnn"
    epochs: int = 30
    lr_max: float = 0.05
    lr_min: float = 0.004
    batch_size: int = 32
    seed: int = 0


@dataclass
class SuiteSpec:
    reuse: list | None = None  # list of ReuseSpec dicts; None -> the default twelve
    independent_seeds: tuple = (101, 102, 103)
    independent_epochs: int = 30
    augmented: int = 8
    augmented_seed: int = 500


@dataclass
class FingerprintSpec:
    target: str = "logo"  # logo | random | path to a PGM bitmap
    target_seed: int = 0
    initial_images: str = "gray"  # see fingerprint.initial_images
    initial_seed: int = 3
    mapping: MappingConfig = field(default_factory=MappingConfig)
    extraction: ExtractionConfig = field(default_factory=modeldiff_recipe)


@dataclass
class AttackSpec:
    kind: str = "falseclaim-untargeted"
    gamma: float = 0.03
    eta: float = 0.1
    seeds: int = 200
    helpers: int = 0
    epochs: int = 10
    task_weight: float = 0.5
    lr: float = 0.005
    adversary_seed: int = 900
    owner_package: str | None = None


@dataclass
class ExperimentConfig:
    schema: int = SCHEMA_VERSION
    output_dir: str = "runs/default"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    suite: SuiteSpec = field(default_factory=SuiteSpec)
    fingerprint: FingerprintSpec = field(default_factory=FingerprintSpec)
    attack: AttackSpec = field(default_factory=AttackSpec)
    kappa: float = 1e-9
    source_model: str | None = None
    suite_dir: str | None = None
    package: str | None = None
    suspect_model: str | None = None
    registry: str | None = None
    owner: str = "owner"

    def reuse_specs(self) -> list[ReuseSpec] | None:
        if self.suite.reuse is None:
            return None
        out = []
        for i, raw in enumerate(self.suite.reuse):
            try:
                out.append(_build(ReuseSpec, raw, f"suite.reuse[{i}]"))
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        return out


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _build(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    hints = _field_types(cls)
    unknown = sorted(set(raw) - set(hints))
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in raw.items():
        kwargs[name] = _coerce(hints[name], value, f"{where}.{name}" if where else name)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def _coerce(tp, value, where: str):
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        tp = next(a for a in args if a is not type(None))
        return _coerce(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if tp is tuple or origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    if tp is list or origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return value
    return value


def config_from_dict(raw: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, raw, "")
    if cfg.schema != SCHEMA_VERSION:
        raise ConfigError(f"schema: unsupported version {cfg.schema} (expected {SCHEMA_VERSION})")
    if not 0 < cfg.kappa < 1:
        raise ConfigError(f"kappa: must lie in (0, 1), got {cfg.kappa}")
    if cfg.dataset.kind not in ("synthetic", "csv-pixels", "image-directory"):
        raise ConfigError(f"dataset.kind: unknown dataset kind {cfg.dataset.kind!r}")
    if cfg.dataset.kind != "synthetic" and not cfg.dataset.path:
        raise ConfigError("dataset.path: required for non-synthetic datasets")
    cfg.reuse_specs()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc})") from None
    return config_from_dict(raw)


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def require_paths(cfg: ExperimentConfig, *names: str) -> None:
    """Fail with a field-level message when a referenced file is missing."""
    for name in names:
        obj, attr = cfg, name
        if "." in name:
            head, attr = name.rsplit(".", 1)
            for part in head.split("."):
                obj = getattr(obj, part)
        value = getattr(obj, attr)
        if value is None:
            raise ConfigError(f"{name}: required but not set")
        if not Path(value).exists():
            raise ConfigError(f"{name}: path {value!r} does not exist")
