"""Experiment configuration: sectioned ``key = value`` files.

Precedence is defaults < config file < command-line overrides. Unknown
sections or keys are rejected, all of them listed at once.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field

from .episodes import TrainConfig
from .errors import ConfigError


@dataclass
class DataConfig:
    dataset: str = "synthetic"  # "synthetic" or "image-folder:PATH"
    seed: int = 0
    n_classes_pool: int = 20
    input_dim: int = 32
    cluster_std: float = 0.1
    cluster_separation: float = 1.0
    samples_per_class: int = 20
    augment_rotations: bool = False
    train_classes: int = 0
    val_classes: int = 0


@dataclass
class ModelConfig:
    arch: str = "mlp"  # "mlp" or "conv4"
    hidden: tuple = (64, 64)
    embed_dim: int = 64
    channels: tuple = (64, 64, 64, 64)
    seed: int = 0


@dataclass
class EvalConfig:
    n_way: int = 5
    n_shot: int = 1
    n_query: int = 15
    n_episodes: int = 1000
    proj_dim: int | str = "full"
    seed: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(section: str, key: str, text: str, hint):
    text = text.strip()
    try:
        if hint in (int, "int"):
            return int(text)
        if hint in (float, "float"):
            return float(text)
        if hint in (bool, "bool"):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint in (tuple, "tuple"):
            return tuple(int(x) for x in text.split(",") if x.strip())
        if "int | str" in str(hint):
            return text if text == "full" else int(text)
        return text
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {text!r} as {hint}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply(cfg: RunConfig, values: dict[str, dict[str, str]]) -> RunConfig:
    """Overlay ``{section: {key: text}}`` onto ``cfg`` in place."""
    unknown = []
    for section, items in values.items():
        if section not in SECTIONS:
            unknown.append(f"[{section}]")
            continue
        names = {f.name for f in dataclasses.fields(getattr(cfg, section))}
        for key in items:
            if key not in names:
                unknown.append(f"{section}.{key}")
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for section, items in values.items():
        target = getattr(cfg, section)
        hints = typing.get_type_hints(type(target))
        for key, text in items.items():
            setattr(target, key, _coerce(section, key, str(text), hints[key]))
    return cfg


def parse_text(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values = {s: dict(parser.items(s)) for s in parser.sections()}
    return apply(base if base is not None else RunConfig(), values)


def load(path, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text, base)


def dump(cfg: RunConfig) -> str:
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        obj = getattr(cfg, section)
        for f in dataclasses.fields(obj):
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)
