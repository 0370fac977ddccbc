"""
Configuration loading

Plain-text key=value files with dotted keys, one per line:

    # desk-scale run
    grid.width = 128
    grid.height = 16
    stack.d = 8
    net.depth = 4
    train.lr = 1e-3

Blank lines and `#` comments are ignored. Flag overrides use the same
`section.field=value` form and are applied after the file.
"""

import logging
import os
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, Mapping, Optional, Type, Union

from pydantic import BaseModel

from bevpredict.models import (
    AppConfig,
    EvalConfig,
    ExtractConfig,
    GridSpec,
    NetSpec,
    StackConfig,
    SynthConfig,
    TrainConfig,
)
from bevpredict.utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)

SECTIONS: Dict[str, Type[BaseModel]] = {
    "grid": GridSpec,
    "stack": StackConfig,
    "net": NetSpec,
    "train": TrainConfig,
    "extract": ExtractConfig,
    "eval": EvalConfig,
    "synth": SynthConfig,
}

THREADS_ENV = "BEVF_THREADS"


def parse_config_text(text: str) -> Dict[str, str]:
    """key=value lines -> {dotted key: raw value}; later lines win"""

    values: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InvalidArgumentError(f"config line {lineno}: expected key=value, got {line!r}")
        values[key.strip()] = value.strip()
    return values


def parse_overrides(overrides: Iterable[str]) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise InvalidArgumentError(f"override must look like section.key=value, got {item!r}")
        values[key.strip()] = value.strip()
    return values


def _field_name(model: Type[BaseModel], key: str) -> Optional[str]:
    for name, info in model.model_fields.items():
        if key == name or key == info.alias:
            return name
    return None


def _raw_value(raw: str):
    if raw.lower() in ("none", ""):
        return None
    if "," in raw:
        return [part.strip() for part in raw.split(",")]
    return raw


def build_config(values: Mapping[str, str]) -> AppConfig:
    """Validate dotted raw values into an AppConfig; unknown keys are rejected"""

    sections: Dict[str, Dict[str, object]] = {name: {} for name in SECTIONS}
    for key, raw in values.items():
        section, _, field = key.partition(".")
        model = SECTIONS.get(section)
        name = _field_name(model, field) if model is not None and field else None
        if name is None:
            raise InvalidArgumentError(f"unknown config key '{key}'")
        sections[section][name] = _raw_value(raw)

    return AppConfig(**sections)


def load_config(
    source: Union[str, Path, None] = None,
    overrides: Iterable[str] = ()
) -> AppConfig:
    """
    Effective configuration from an optional file plus overrides

    Args:
        source: Path of a key=value file, or None for defaults only
        overrides: `section.key=value` strings; they win over the file
    """

    values: Dict[str, str] = {}
    if source is not None:
        values.update(parse_config_text(Path(source).read_text()))
        logger.debug(f"Loaded {len(values)} config value(s) from {source}")
    values.update(parse_overrides(overrides))
    return build_config(values)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    return str(value)


def dump_config(cfg: AppConfig) -> str:
    """Every field of every section, in the format load_config reads"""

    lines = []
    for section in SECTIONS:
        model = getattr(cfg, section)
        for name, info in type(model).model_fields.items():
            key = info.alias or name
            lines.append(f"{section}.{key} = {_format(getattr(model, name))}")
    return "\n".join(lines) + "\n"


def resolve_threads(flag: Optional[int] = None) -> int:
    """--threads, else BEVF_THREADS, else -1 (all cores)"""

    if flag is not None:
        threads = flag
    else:
        raw = os.getenv(THREADS_ENV)
        if raw is None or not raw.strip():
            return -1
        try:
            threads = int(raw)
        except ValueError as e:
            raise InvalidArgumentError(f"{THREADS_ENV} must be an integer, got {raw!r}") from e

    if threads == 0 or threads < -1:
        raise InvalidArgumentError(f"thread count must be >= 1 or -1 (all cores), got {threads}")
    return threads
