"""Plain ``key = value`` config files mapped onto dataclasses."""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


def read_kv(path: str | Path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _coerce(value: Any, hint: Any, key: str):
    if not isinstance(value, str):
        return value
    origin = typing.get_origin(hint)
    try:
        if hint is bool or hint == "bool":
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if hint is int or hint == "int":
            return int(value)
        if hint is float or hint == "float":
            return float(value)
        if origin is tuple:
            args = typing.get_args(hint)
            parts = [p.strip() for p in value.split(",") if p.strip()]
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(_coerce(p, args[0], key) for p in parts)
            return tuple(_coerce(p, a, key) for p, a in zip(parts, args, strict=True))
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def from_mapping(cls, values: Mapping[str, Any], *, ignore_unknown: bool = False):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in values.items():
        if key not in names:
            if ignore_unknown:
                continue
            raise ConfigError(f"unknown config key {key!r} for {cls.__name__}")
        kwargs[key] = _coerce(value, hints[key], key)
    return cls(**kwargs)


def to_lines(obj) -> list[str]:
    lines = []
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    return lines
