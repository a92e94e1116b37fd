"""Layered run configuration: defaults < AGIS_* environment < config file < flags.

The config file is flat ``key = value`` text; ``#`` starts a comment. Keys are
the long flag names with dashes or underscores (``batch-size`` == ``batch_size``).
"""

from __future__ import annotations

import os
from pathlib import Path

ENV_PREFIX = "AGIS_"


class ConfigFileError(ValueError):
    pass


def _norm(key: str) -> str:
    return key.strip().replace("-", "_").lower()


def read_config_file(path: str | Path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[_norm(key)] = value.strip()
    return out


def _convert(value, default, kind):
    if value is None or not isinstance(value, str):
        return value
    kind = kind or (type(default) if default is not None else str)
    if kind is bool:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigFileError(f"not a boolean: {value!r}")
    return kind(value)


def resolve(options: dict[str, tuple], flags: dict, file_values: dict[str, str] | None = None,
            environ=None, known_keys=None) -> tuple[dict, dict]:
    """Merge the layers for ``options`` = ``{key: (default, type)}``.

    Returns ``(values, sources)`` where ``sources[key]`` names the winning layer.
    File keys outside ``known_keys`` (default: ``options``) are rejected.
    """
    environ = os.environ if environ is None else environ
    file_values = file_values or {}
    values, sources = {}, {}
    for key, (default, kind) in options.items():
        env_key = ENV_PREFIX + key.upper()
        if flags.get(key) is not None:
            values[key], sources[key] = flags[key], "flag"
        elif key in file_values:
            values[key], sources[key] = _convert(file_values[key], default, kind), "file"
        elif env_key in environ:
            values[key], sources[key] = _convert(environ[env_key], default, kind), "env"
        else:
            values[key], sources[key] = default, "default"
    unknown = set(file_values) - set(known_keys if known_keys is not None else options)
    if unknown:
        raise ConfigFileError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return values, sources
