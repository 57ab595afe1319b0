"""Reading experiment configs: flat ``key = value`` text or JSON."""

from __future__ import annotations

import configparser
import json
from pathlib import Path

from .bench import ExperimentConfig

__all__ = ["load_config", "parse_flat", "parse_overrides"]


def parse_flat(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` and ``;`` start comments."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    cp.read_string("[config]\n" + text)
    return dict(cp["config"])


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file; ``.json`` files are parsed as JSON, anything else as flat text."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        raw = json.loads(text)
    else:
        raw = parse_flat(text)
    raw.update(overrides or {})
    return ExperimentConfig.from_dict(raw)
