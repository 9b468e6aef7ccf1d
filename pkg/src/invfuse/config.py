"""Flat ``section.key = value`` configuration files with command-line overrides.

Sections are ``model.``, ``train.`` and ``ablate.``. Values are Python
literals (``3``, ``1e-4``, ``true``, ``none``, ``3,5,7``); anything else is
kept as a string.
"""
import ast
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig

SECTIONS = ("model", "train", "ablate")


@dataclass
class AblateConfig:
    epochs: int = 2
    max_steps: Optional[int] = None
    eval_manifest: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if self.epochs < 0 or self.workers < 1:
            raise ConfigError("ablate.epochs must be >= 0 and ablate.workers >= 1")
        if self.max_steps is not None and self.max_steps < 0:
            raise ConfigError("ablate.max_steps must be non-negative")


@dataclass
class ResolvedConfig:
    model: ModelConfig
    train: TrainConfig
    ablate: AblateConfig

    def lines(self):
        out = []
        for section in SECTIONS:
            for key, value in asdict(getattr(self, section)).items():
                out.append(f"{section}.{key} = {format_value(value)}")
        return out


def format_value(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value)


def parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_assignment(line):
    if "=" not in line:
        raise ConfigError(f"expected key=value, got {line!r}")
    key, value = line.split("=", 1)
    key = key.strip()
    if "." not in key or key.split(".", 1)[0] not in SECTIONS:
        raise ConfigError(f"option {key!r} needs a section prefix ({', '.join(SECTIONS)})")
    return key, parse_value(value)


def read_config_file(path):
    values = {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            key, value = parse_assignment(line)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
        values[key] = value
    return values


def _coerce(cls, section, values):
    kwargs = {}
    types = {f.name: f for f in fields(cls)}
    for key, value in values.items():
        if key not in types:
            raise ConfigError(f"unknown option {section}.{key}")
        default = types[key].default
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{section}.{key} must be true or false")
        elif isinstance(default, int) and not isinstance(value, int):
            raise ConfigError(f"{section}.{key} must be an integer")
        elif isinstance(default, float) and isinstance(value, (int, float)) and not isinstance(value, bool):
            value = float(value)
        elif isinstance(default, tuple) or key in ("fixed_weights", "branch_kernels"):
            if value is not None and not isinstance(value, (list, tuple)):
                value = (value,)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def resolve(config_path=None, overrides=()):
    """Merge an optional config file with ``section.key=value`` overrides."""
    values = read_config_file(config_path) if config_path else {}
    for item in overrides:
        key, value = parse_assignment(item)
        values[key] = value
    per_section = {s: {} for s in SECTIONS}
    for key, value in values.items():
        section, name = key.split(".", 1)
        per_section[section][name] = value
    return ResolvedConfig(
        model=_coerce(ModelConfig, "model", per_section["model"]),
        train=_coerce(TrainConfig, "train", per_section["train"]),
        ablate=_coerce(AblateConfig, "ablate", per_section["ablate"]),
    )
