"""Plain-text ``key = value`` configuration files.

One setting per line, ``#`` starts a comment, lists are comma separated.
Values are kept as strings here; typed accessors convert on read.
"""

from __future__ import annotations

import configparser
from pathlib import Path
from typing import Any, Mapping

_SECTION = "config"


class KeyValueConfig:
    """Parsed key-value settings with typed getters."""

    def __init__(self, values: Mapping[str, str] | None = None):
        self._values: dict[str, str] = {k.strip().lower(): str(v).strip() for k, v in (values or {}).items()}

    @classmethod
    def parse(cls, text: str) -> "KeyValueConfig":
        parser = configparser.ConfigParser(
            delimiters=("=", ":"), comment_prefixes=("#", ";"), inline_comment_prefixes=("#",), interpolation=None
        )
        parser.optionxform = str.lower
        parser.read_string(f"[{_SECTION}]\n{text}")
        return cls(dict(parser[_SECTION]))

    @classmethod
    def load(cls, path: str | Path) -> "KeyValueConfig":
        return cls.parse(Path(path).read_text())

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self._values.items())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dump())

    def as_dict(self) -> dict[str, str]:
        return dict(self._values)

    def __contains__(self, key: str) -> bool:
        return key.lower() in self._values

    def set(self, key: str, value: Any) -> None:
        if isinstance(value, (list, tuple)):
            value = ", ".join(str(v) for v in value)
        self._values[key.lower()] = str(value)

    def get_str(self, key: str, default: str | None = None) -> str:
        key = key.lower()
        if key in self._values:
            return self._values[key]
        if default is None:
            raise KeyError(f"missing config key '{key}'")
        return default

    def get_int(self, key: str, default: int | None = None) -> int:
        return int(self.get_str(key, None if default is None else str(default)))

    def get_float(self, key: str, default: float | None = None) -> float:
        return float(self.get_str(key, None if default is None else repr(default)))

    def get_bool(self, key: str, default: bool | None = None) -> bool:
        raw = self.get_str(key, None if default is None else str(default)).lower()
        if raw in {"1", "true", "yes", "on"}:
            return True
        if raw in {"0", "false", "no", "off"}:
            return False
        raise ValueError(f"config key '{key}' is not a boolean: {raw!r}")

    def get_list(self, key: str, cast=str, default: list | None = None) -> list:
        key = key.lower()
        if key not in self._values:
            if default is None:
                raise KeyError(f"missing config key '{key}'")
            return list(default)
        raw = self._values[key]
        return [cast(item.strip()) for item in raw.split(",") if item.strip()]

    def get_optional_float(self, key: str) -> float | None:
        raw = self._values.get(key.lower(), "")
        return None if raw.lower() in {"", "none"} else float(raw)
