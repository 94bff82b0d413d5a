"""Plain-text ``key = value`` documents shared by sequences, phantoms and pipelines.

Lines starting with ``#`` are comments. Lists are whitespace separated.
Keys may be dotted (``phantom.grid_n``) to group settings.
"""
from __future__ import annotations

import configparser

_ROOT = "root"


class ConfigError(ValueError):
    """Malformed or invalid configuration document. The message names the key."""


def parse_kv(text: str) -> dict[str, str]:
    parser = configparser.ConfigParser(
        delimiters=("=",), comment_prefixes=("#",), inline_comment_prefixes=("#",),
        interpolation=None, strict=True,
    )
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(f"[{_ROOT}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed document: {exc}") from exc
    if parser.sections() != [_ROOT]:
        raise ConfigError("sections are not supported; use dotted keys")
    return dict(parser[_ROOT])


def format_kv(items: dict[str, object], header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    for key, value in items.items():
        if isinstance(value, (list, tuple)):
            value = " ".join(_fmt(v) for v in value)
        else:
            value = _fmt(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def _fmt(v: object) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def get_float(d: dict[str, str], key: str, default: float | None = None) -> float:
    if key not in d:
        if default is None:
            raise ConfigError(f"missing key '{key}'")
        return default
    try:
        return float(d[key])
    except ValueError:
        raise ConfigError(f"key '{key}': not a number: {d[key]!r}") from None


def get_int(d: dict[str, str], key: str, default: int | None = None) -> int:
    if key not in d:
        if default is None:
            raise ConfigError(f"missing key '{key}'")
        return default
    try:
        return int(d[key])
    except ValueError:
        raise ConfigError(f"key '{key}': not an integer: {d[key]!r}") from None


def get_floats(d: dict[str, str], key: str, default: list[float] | None = None) -> list[float]:
    if key not in d:
        if default is None:
            raise ConfigError(f"missing key '{key}'")
        return list(default)
    try:
        return [float(tok) for tok in d[key].split()]
    except ValueError:
        raise ConfigError(f"key '{key}': expected whitespace-separated numbers") from None


def get_str(d: dict[str, str], key: str, default: str | None = None) -> str:
    if key not in d:
        if default is None:
            raise ConfigError(f"missing key '{key}'")
        return default
    return d[key].strip()


def subsection(d: dict[str, str], prefix: str) -> dict[str, str]:
    """Keys under ``prefix.`` with the prefix stripped."""
    p = prefix + "."
    return {k[len(p):]: v for k, v in d.items() if k.startswith(p)}
