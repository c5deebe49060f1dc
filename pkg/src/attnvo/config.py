"""Flat ``key = value`` text encoding for nested config dataclasses.

Nested dataclass fields become dotted keys (``model.lstm_hidden = 32``).
Values are parsed back using the type of the current field value, so every
config dataclass needs complete defaults.
"""

from __future__ import annotations

import dataclasses
from typing import Any


class ConfigFileError(ValueError):
    pass


def _format(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ", ".join(_format(x) for x in v)
    return str(v)


def flatten(obj, prefix: str = "") -> dict[str, str]:
    out: dict[str, str] = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            out.update(flatten(v, key + "."))
        else:
            out[key] = _format(v)
    return out


def dumps(obj) -> str:
    return "".join(f"{k} = {v}\n" for k, v in flatten(obj).items())


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _parse_scalar(text: str, like):
    if isinstance(like, bool):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def _parse_value(text: str, like):
    if isinstance(like, (tuple, list)):
        items = [s.strip() for s in text.split(",") if s.strip()]
        if like and all(isinstance(x, int) and not isinstance(x, bool) for x in like):
            return tuple(int(s) for s in items)
        if like and all(isinstance(x, str) for x in like):
            return tuple(items)
        return tuple(float(s) for s in items)
    return _parse_scalar(text, like)


def apply(obj, values: dict[str, str], strict: bool = True):
    """Return a copy of ``obj`` with dotted-key overrides applied."""
    nested: dict[str, dict[str, str]] = {}
    direct = {}
    names = {f.name for f in dataclasses.fields(obj)}
    for key, v in values.items():
        head, _, rest = key.partition(".")
        if head not in names:
            if strict:
                raise ConfigFileError(f"unknown config key {key!r}")
            continue
        if rest:
            nested.setdefault(head, {})[rest] = v
        else:
            direct[head] = v
    changes = {}
    for name, v in direct.items():
        current = getattr(obj, name)
        if dataclasses.is_dataclass(current):
            raise ConfigFileError(f"{name!r} is a section, not a value")
        try:
            changes[name] = _parse_value(v, current)
        except ValueError as e:
            raise ConfigFileError(f"bad value for {name!r}: {e}") from None
    for name, sub in nested.items():
        current = getattr(obj, name)
        if not dataclasses.is_dataclass(current):
            raise ConfigFileError(f"{name!r} has no sub-keys")
        changes[name] = apply(current, sub, strict)
    return dataclasses.replace(obj, **changes)


def loads(obj, text: str, strict: bool = True):
    return apply(obj, parse_text(text), strict)
