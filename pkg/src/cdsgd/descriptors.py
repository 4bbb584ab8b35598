"""Parsing of compact ``kind:key=value,...`` command-line descriptors."""
from __future__ import annotations

from .errors import ConfigError


def parse_descriptor(text: str) -> tuple[str, list[str], dict[str, str]]:
    """Split ``"ring:beta=0.2"`` into ``("ring", [], {"beta": "0.2"})``.

    Items without ``=`` are returned as positional arguments, which is how
    file paths are passed (``"file:/tmp/pi.json"``).
    """
    if not text or not text.strip():
        raise ConfigError("empty descriptor")
    kind, _, rest = text.strip().partition(":")
    args, kwargs = [], {}
    if rest:
        for item in rest.split(","):
            item = item.strip()
            if not item:
                continue
            key, eq, value = item.partition("=")
            if eq:
                kwargs[key.strip()] = value.strip()
            else:
                args.append(item)
    return kind.strip().lower(), args, kwargs


def get_float(kwargs: dict[str, str], key: str, default: float | None = None) -> float:
    if key not in kwargs:
        if default is None:
            raise ConfigError(f"missing required parameter {key!r}")
        return default
    try:
        return float(kwargs[key])
    except ValueError:
        raise ConfigError(f"parameter {key}={kwargs[key]!r} is not a number") from None


def get_int(kwargs: dict[str, str], key: str, default: int | None = None) -> int:
    if key not in kwargs:
        if default is None:
            raise ConfigError(f"missing required parameter {key!r}")
        return default
    try:
        return int(kwargs[key])
    except ValueError:
        raise ConfigError(f"parameter {key}={kwargs[key]!r} is not an integer") from None
