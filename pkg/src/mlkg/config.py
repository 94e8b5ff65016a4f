"""Run configuration: one structured document, namespaced per module.

A config file (YAML or JSON) may set any subset of keys; unknown sections or
keys are rejected rather than ignored. CLI flags override file values. The
effective configuration is echoed into every output directory for
provenance.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

CACHE_ENV_VAR = "MLKG_CACHE"


@dataclass
class MLLMSection:
    backend: str = "stub"          # stub | http
    url: str = ""
    timeout: float = 30.0
    retries: int = 3
    min_interval: float = 0.0


@dataclass
class TextEncoderSection:
    backend: str = "hash_stub"     # hash_stub | pretrained
    dim: int = 512
    normalize: bool = False
    token_limit: int = 77
    model_path: str = ""


@dataclass
class InjectorSection:
    selection: str = "all"         # ka | kb | scene | all
    d_proj: int = 512
    d_dec: int = 256


@dataclass
class ModelSection:
    resolution: int = 256
    patch: int = 16
    width: int = 256
    depth: int = 4
    heads: int = 8
    decoder_depth: int = 2
    lora_rank: int = 4
    lora_alpha: float = 4.0
    lora_pattern: str = r"attn\.(qkv|proj)$"


@dataclass
class TrainSection:
    initial_lr: float = 5e-3
    momentum: float = 0.9
    total_steps: int = 300
    batch_size: int = 2
    seed: int = 0
    data_root: str = ""
    split: str = "train"


@dataclass
class EvalSection:
    groups_file: str = ""


@dataclass
class RunConfig:
    mllm: MLLMSection = field(default_factory=MLLMSection)
    text_encoder: TextEncoderSection = field(default_factory=TextEncoderSection)
    injector: InjectorSection = field(default_factory=InjectorSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def set(self, dotted_key: str, value):
        """Apply one override like ``train.total_steps = 50``."""
        try:
            section_name, key = dotted_key.split(".", 1)
        except ValueError:
            raise ConfigError(f"override key {dotted_key!r} must look like section.key")
        _apply({section_name: {key: value}}, self)

    def echo(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "config.yaml"
        path.write_text(
            yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False),
            encoding="utf-8",
        )
        return path


def _coerce(current, value, where: str):
    if isinstance(current, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if isinstance(current, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported value {value!r}")


def _apply(data: dict, config: RunConfig):
    sections = {f.name: getattr(config, f.name) for f in dataclasses.fields(config)}
    for section_name, entries in data.items():
        if section_name not in sections:
            raise ConfigError(
                f"unknown config section {section_name!r} (known: {sorted(sections)})"
            )
        section = sections[section_name]
        if not isinstance(entries, dict):
            raise ConfigError(f"section {section_name!r} must be a mapping")
        known = {f.name for f in dataclasses.fields(section)}
        for key, value in entries.items():
            if key not in known:
                raise ConfigError(
                    f"unknown key {section_name}.{key} (known: {sorted(known)})"
                )
            setattr(section, key, _coerce(getattr(section, key), value, f"{section_name}.{key}"))


def load_config(path=None) -> RunConfig:
    """Defaults, optionally overlaid with a YAML/JSON config file."""
    config = RunConfig()
    if path is None:
        return config
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    if data is None:
        return config
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    _apply(data, config)
    return config


def default_cache_path(explicit=None) -> Path:
    """Knowledge cache path: flag wins, then MLKG_CACHE, then ./knowledge_cache.json."""
    if explicit:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env)
    return Path("knowledge_cache.json")
