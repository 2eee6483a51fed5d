"""Flat ``key = value`` experiment files with dotted sections.

    experiment = wip-rate
    map.kind = doubling
    scales.n = 64, 128, 256   # comma separated lists
"""
import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from pydantic import ValidationError

from wiplab.errors import ConfigError
from wiplab.schemas import ExperimentConfig

logger = logging.getLogger(__name__)


def parse_text(text: str) -> Dict[str, Any]:
    """Flat mapping of dotted keys to strings or lists of strings."""
    flat: Dict[str, Any] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {number}: empty key or value", field=key or None)
        if key in flat:
            raise ConfigError(f"line {number}: duplicate key", field=key)
        flat[key] = [item.strip() for item in value.split(",") if item.strip()] if "," in value else value
    return flat


def nest(flat: Mapping[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for key, value in flat.items():
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError("a key is used both as a value and as a section", field=key)
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError("a key is used both as a value and as a section", field=key)
        node[parts[-1]] = value
    return tree


def build_config(values: Mapping[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(values)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{field}: {first['msg']}", field=field) from exc


def load_config(path: Union[str, Path, None] = None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Read ``path`` (optional) and apply dotted ``overrides`` on top."""
    flat: Dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
        flat.update(parse_text(text))
        logger.debug("loaded %d keys from %s", len(flat), path)
    for key, value in (overrides or {}).items():
        if value is not None:
            flat[key] = value
    return build_config(nest(flat))


def to_text(config: ExperimentConfig) -> str:
    """Render a config back into the flat file format, defaults included."""
    lines = []

    def walk(prefix: str, value: Any):
        if isinstance(value, dict):
            for key, child in value.items():
                walk(f"{prefix}.{key}" if prefix else key, child)
        elif isinstance(value, list):
            if value:
                lines.append(f"{prefix} = {', '.join(str(item) for item in value)}" + ("," if len(value) == 1 else ""))
        elif value is not None:
            lines.append(f"{prefix} = {value}")

    walk("", config.model_dump(mode="json"))
    return "\n".join(lines) + "\n"
