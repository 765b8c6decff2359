"""Flat ``key=value`` run configuration.

Resolution order is defaults, then an optional config file, then
command-line flags.  Keys unknown to the command are rejected.  Every run
writes the resolved settings to ``config.txt`` in its output directory.
"""

from __future__ import annotations

import os

from invariant_cae.errors import ValidationError

CONFIG_NAME = "config.txt"


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(key, raw, default):
    """Parse ``raw`` with the type of ``default``; None defaults keep strings."""
    if raw is None or not isinstance(raw, str):
        return raw
    if raw.strip().lower() in ("", "none"):
        return None
    try:
        if isinstance(default, bool):
            return _parse_bool(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ValidationError(f"config key {key!r}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw.strip()


def read_config_file(path) -> dict:
    """Read ``key=value`` lines; ``#`` starts a comment line."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}: line {lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


class RunConfig:
    """Resolved settings for one command; behaves like a read-only mapping."""

    def __init__(self, defaults: dict, file_values: dict | None = None, overrides: dict | None = None):
        self._defaults = dict(defaults)
        values = dict(defaults)
        for source in (file_values or {}, overrides or {}):
            unknown = sorted(set(source) - set(defaults))
            if unknown:
                raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
            for key, raw in source.items():
                if raw is not None:
                    values[key] = _coerce(key, raw, defaults[key])
        self._values = values

    @classmethod
    def resolve(cls, defaults: dict, config_path=None, overrides: dict | None = None) -> RunConfig:
        file_values = read_config_file(config_path) if config_path else None
        return cls(defaults, file_values, overrides)

    def __getitem__(self, key):
        return self._values[key]

    def __contains__(self, key):
        return key in self._values

    def get(self, key, default=None):
        return self._values.get(key, default)

    def to_dict(self) -> dict:
        return dict(self._values)

    def to_text(self) -> str:
        lines = []
        for key in sorted(self._values):
            value = self._values[key]
            lines.append(f"{key}={'none' if value is None else value}")
        return "\n".join(lines) + "\n"

    def write(self, directory) -> str:
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, CONFIG_NAME)
        with open(path, "w") as fh:
            fh.write(self.to_text())
        return path
