"""Flat ``key=value`` config files mapped onto dataclasses.

Blank lines and ``#`` comments are ignored. Every dataclass field is
addressable; unknown keys are errors so typos in sweep files fail loudly.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path


class ConfigError(ValueError):
    pass


def _coerce(raw: str, tp, key: str):
    if isinstance(tp, str):
        tp = eval(tp, {"float": float, "int": int, "str": str, "bool": bool})  # noqa: S307
    origin = typing.get_origin(tp)
    if origin is typing.Union or origin is types.UnionType:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if raw.lower() in ("none", ""):
            return None
        tp = args[0]
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(tp, '__name__', tp)}") from None


def parse_pairs(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def apply_pairs(obj, pairs: dict[str, str]):
    """Return a copy of dataclass ``obj`` with ``pairs`` applied."""
    hints = typing.get_type_hints(type(obj))
    fields = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for k, v in pairs.items():
        if k not in fields:
            raise ConfigError(f"unknown key {k!r}")
        updates[k] = _coerce(v, hints[k], k)
    return dataclasses.replace(obj, **updates)


def load(path, base):
    return apply_pairs(base, parse_pairs(Path(path).read_text(), str(path)))


def dump(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        lines.append(f"{f.name}={'none' if v is None else v}")
    return "\n".join(lines) + "\n"
