"""Experiment configuration: INI files, CLI overrides, fingerprints.

Config files are INI-style ``key = value`` sections.  A result fingerprint
is the SHA-256 of the canonical JSON of everything that could change the
result (configs, seeds, prompt/template versions), so identical setups hash
identically and any change is visible.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import typing
from pathlib import Path
from typing import Any, Dict, Mapping, Sequence, Type, TypeVar

from .errors import ConfigurationError

T = TypeVar("T")

ConfigDict = Dict[str, Dict[str, str]]


def load_config(path: str | Path) -> ConfigDict:
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}")
    return {section: dict(parser[section]) for section in parser.sections()}


def apply_overrides(config: ConfigDict, assignments: Sequence[str]) -> ConfigDict:
    """Apply ``section.key=value`` overrides in order."""
    out = {section: dict(values) for section, values in config.items()}
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigurationError(
                f"override {assignment!r} must look like section.key=value"
            )
        target, value = assignment.split("=", 1)
        if "." not in target:
            raise ConfigurationError(
                f"override {assignment!r} must look like section.key=value"
            )
        section, key = target.split(".", 1)
        out.setdefault(section.strip(), {})[key.strip()] = value.strip()
    return out


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce_value(raw: str, annotation: Any, key: str) -> Any:
    origin = typing.get_origin(annotation)
    if origin is typing.Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        if raw.strip().lower() in ("", "none", "null"):
            return None
        return _coerce_value(raw, args[0], key)
    if annotation is bool:
        lowered = raw.strip().lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ConfigurationError(f"{key}: {raw!r} is not a boolean")
    if annotation is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigurationError(f"{key}: {raw!r} is not an integer")
    if annotation is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigurationError(f"{key}: {raw!r} is not a number")
    return raw


def coerce_dataclass(cls: Type[T], section: Mapping[str, str], **overrides: Any) -> T:
    """Build a dataclass from string config values, typed by its fields."""
    hints = typing.get_type_hints(cls)
    known = {f.name: hints[f.name] for f in dataclasses.fields(cls)}
    kwargs: Dict[str, Any] = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigurationError(
                f"unknown option {key!r} for {cls.__name__}; "
                f"valid keys: {sorted(known)}"
            )
        kwargs[key] = _coerce_value(raw, known[key], key)
    kwargs.update(overrides)
    return cls(**kwargs)


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)


def fingerprint(payload: Mapping[str, Any]) -> str:
    """Stable digest over a JSON-serializable config payload."""
    return hashlib.sha256(canonical_json(dict(payload)).encode("utf-8")).hexdigest()


def parse_ratios(raw: str) -> tuple:
    parts = [p for p in raw.replace(",", " ").split() if p]
    try:
        values = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigurationError(f"cannot parse ratios from {raw!r}")
    if len(values) != 3:
        raise ConfigurationError(f"expected three ratios, got {raw!r}")
    return values
