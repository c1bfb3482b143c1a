"""Flat key=value run configuration shared by the CLI subcommands.

File format: one ``section.key = value`` assignment per line, sections
``model``, ``train``, and ``data``. Blank lines and ``#`` comments are
skipped. Unknown keys are rejected so typos fail loudly. Values are
parsed by the declared field type of the target dataclass.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .data import SyntheticSpec
from .model import CastConfig
from .tokens import ConfigError
from .train import TrainConfig

__all__ = ["RunConfig", "parse_value"]


def parse_value(raw, target_type, key):
    raw = raw.strip()
    try:
        if target_type is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is tuple:
            if not raw:
                return ()
            return tuple(int(part) for part in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {key} = {raw!r} as {target_type.__name__}")


def _field_types(cls):
    return {f.name: f.type if isinstance(f.type, type) else type(f.default)
            for f in dataclasses.fields(cls)}


@dataclass
class RunConfig:
    model: CastConfig = field(default_factory=CastConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: SyntheticSpec = field(default_factory=SyntheticSpec)

    _SECTIONS = {"model": CastConfig, "train": TrainConfig, "data": SyntheticSpec}

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            return cls.from_text(f.read(), source=path)

    @classmethod
    def from_text(cls, text, source="<config>"):
        overrides = {"model": {}, "train": {}, "data": {}}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
            key, raw = line.split("=", 1)
            key = key.strip()
            if "." not in key:
                raise ConfigError(
                    f"{source}:{lineno}: key {key!r} needs a model./train./data. prefix")
            section, name = key.split(".", 1)
            if section not in cls._SECTIONS:
                raise ConfigError(f"{source}:{lineno}: unknown section {section!r}")
            types = _field_types(cls._SECTIONS[section])
            if name not in types:
                raise ConfigError(f"{source}:{lineno}: unknown key {key!r}; "
                                  f"valid {section} keys: {sorted(types)}")
            if name in overrides[section]:
                raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
            overrides[section][name] = parse_value(raw, types[name], key)
        return cls.from_overrides(overrides)

    @classmethod
    def from_overrides(cls, overrides):
        kwargs = {}
        for section, section_cls in cls._SECTIONS.items():
            base = dataclasses.asdict(section_cls())
            base.update(overrides.get(section, {}))
            if section == "model":
                base["exchange_layers"] = tuple(base["exchange_layers"])
            kwargs[section] = section_cls(**base)
        run = cls(**kwargs)
        run.validate()
        return run

    def validate(self):
        self.model.validate()
        self.train.validate()
        self.data.validate()
        for name in ("height", "width", "frames"):
            m, d = getattr(self.model, name), getattr(self.data, name)
            if m != d:
                raise ConfigError(f"model.{name}={m} disagrees with data.{name}={d}")
        if self.model.appearance_classes != self.data.appearance_classes:
            raise ConfigError("model and data disagree on appearance class count")
        if self.model.motion_classes != self.data.motion_classes:
            raise ConfigError("model and data disagree on motion class count")
        return self

    def to_dict(self):
        return {"model": self.model.to_dict(),
                "train": self.train.to_dict(),
                "data": self.data.to_dict()}

    def config_hash(self):
        """Hash of the complete assembled run; independent of key order or
        whether a value came from a file or a default."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
