"""INI configuration files with ``[model]``, ``[train]`` and ``[data]`` sections.

Example::

    [model]
    embedding_dim = 16
    arch = input:32x32x3;conv:3>16/k3/s2/p1;conv:16>32/k3/s2/p1;conv:32>64/k3/s2/p1

    [train]
    batch_size = 32
    p_mix = 0.5

Unknown sections or keys are rejected. Command-line flags override file values.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field

from .encoder import Arch
from .errors import ConfigError, IoError
from .protocol import TrainConfig


@dataclass(frozen=True)
class ModelConfig:
    embedding_dim: int = 16
    n_classes: int = 2
    arch: str = field(default_factory=lambda: Arch().canonical())

    def build_arch(self) -> Arch:
        return Arch.parse(self.arch)


@dataclass(frozen=True)
class DataConfig:
    preset: str = "A"
    seed: int = 0
    image_size: int = 32
    per_class_train: int = 500
    per_class_val: int = 100
    per_class_test: int = 100


SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig}


@dataclass
class Settings:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    # keys given explicitly (file or flag), per section
    explicit: dict = field(default_factory=dict)

    def as_dict(self):
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def override(self, section: str, **values) -> "Settings":
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        current = getattr(self, section)
        known = {f.name for f in dataclasses.fields(current)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown [{section}] keys: {sorted(unknown)}")
        explicit = {k: set(v) for k, v in self.explicit.items()}
        explicit.setdefault(section, set()).update(values)
        return dataclasses.replace(self, **{section: dataclasses.replace(current, **values)}, explicit=explicit)


def _convert(raw: str, typ, key):
    try:
        if typ in (bool, "bool"):
            lowered = raw.strip().lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw.strip()


def parse_config(text: str) -> Settings:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    settings = Settings()
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        types = {f.name: f.type for f in dataclasses.fields(SECTIONS[section])}
        values = {}
        for key, raw in parser.items(section):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _convert(raw, types[key], f"{section}.{key}")
        settings = settings.override(section, **values)
    settings.train.validate()
    settings.model.build_arch()
    return settings


def load_config(path) -> Settings:
    if path is None:
        return Settings()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
