"""Pipeline configuration: a TOML document plus `--set key=value` overrides.

Unknown keys are rejected so typos fail loudly instead of silently using a
default.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .diff import ABS_FLOOR, RATIO_FLOOR, TV_FLOOR
from .metadata import DEFAULT_BATCH_BUDGET


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # paths
    src: Optional[str] = None
    corpus: Optional[str] = None
    facts: Optional[str] = None
    candidates: Optional[str] = None
    resources: Optional[str] = None
    buggy_dir: Optional[str] = None
    normal_dir: Optional[str] = None
    out_dir: str = "out"
    # oracle
    oracle: str = "scripted"  # "scripted" | "http"
    transcript: Optional[str] = None
    endpoint: Optional[str] = None
    model: str = "default"
    prompt_dir: Optional[str] = None
    # simulator
    scenario: str = "undo_purge"
    seed: int = 7
    # thresholds
    ratio_floor: float = RATIO_FLOOR
    abs_floor: int = ABS_FLOOR
    tv_floor: float = TV_FLOOR
    batch_budget: int = DEFAULT_BATCH_BUDGET
    # behavior
    resume: bool = False

    def __post_init__(self):
        for name in ("ratio_floor", "abs_floor", "tv_floor", "batch_budget"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"threshold {name} must be positive")


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(name: str, value):
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key: {name}")
    if isinstance(value, str):
        current = getattr(Config(), name)
        if isinstance(current, bool):
            return value.lower() in ("1", "true", "yes", "on")
        if isinstance(current, int) and not isinstance(current, bool):
            return int(value)
        if isinstance(current, float):
            return float(value)
    return value


def load_config(
    path: Optional[str] = None, overrides: Optional[list[str]] = None
) -> Config:
    data: dict = {}
    if path:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        # Accept both a flat document and one-level sections.
        for key, value in doc.items():
            if isinstance(value, dict):
                for sub, v in value.items():
                    data[sub] = v
            else:
                data[key] = value
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        data[key.strip()] = value.strip()
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(key, value)
    return Config(**kwargs)
