"""Layered settings shared by every subcommand.

Precedence, highest first: command-line flags, environment variables,
config file, built-in defaults.  The config file is one JSON object whose
top-level keys are subcommand names ("train", "serve", ...), each mapping
flag names to values.  Environment variables spell the same pair as
``MMCR_<SECTION>_<KEY>``, e.g. ``MMCR_SERVE_PORT=8001``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .errors import DataError, UsageError

__all__ = ["Setting", "load_config_file", "resolve_settings",
           "parse_bool", "parse_int_tuple", "ENV_PREFIX"]

ENV_PREFIX = "MMCR"


def parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {text!r}")


def parse_int_tuple(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


@dataclass(frozen=True)
class Setting:
    """One resolvable knob: its default and how to parse a string form."""

    default: Any
    parse: Callable[[str], Any] = str


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise DataError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise DataError(f"config file {path} must hold a JSON object of sections")
    for section, mapping in raw.items():
        if not isinstance(mapping, dict):
            raise DataError(f"config section {section!r} must be a JSON object")
    return raw


def resolve_settings(section: str, schema: dict[str, Setting], flags: dict,
                     config_path=None, environ=None) -> dict:
    """Fold the four layers into concrete values for one subcommand.

    ``flags`` holds parsed command-line values with None meaning "not
    given".  String values arriving from the environment or the file are
    run through each Setting's parser; natively typed file values pass
    through unchanged.
    """
    environ = os.environ if environ is None else environ
    file_section = {}
    if config_path is not None:
        file_config = load_config_file(config_path)
        file_section = file_config.get(section, {})
        unknown = set(file_section) - set(schema)
        if unknown:
            raise DataError(f"config section {section!r} has unknown keys: "
                            f"{sorted(unknown)}")

    resolved = {}
    for key, setting in schema.items():
        flag_value = flags.get(key)
        if flag_value is not None:
            resolved[key] = flag_value
            continue
        env_key = f"{ENV_PREFIX}_{section.upper()}_{key.upper()}"
        if env_key in environ:
            resolved[key] = setting.parse(environ[env_key])
            continue
        if key in file_section:
            value = file_section[key]
            resolved[key] = setting.parse(value) if isinstance(value, str) else value
            continue
        resolved[key] = setting.default
    return resolved
