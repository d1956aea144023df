"""
ThermoCH - Flat run-config format.

One `section.key = value` assignment per line, `#` starts a comment, lists
are comma separated. Missing keys take the RunConfig defaults.

    physics.beta = 1.5
    grid.n = 128
    continuation.eps_ladder = 1e-2, 1e-3, 1e-4   # joint eps1..eps4 per rung
"""
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Tuple, Union, get_origin
import logging
import re

from pydantic import BaseModel, ValidationError

from ..schemas import RunConfig

logger = logging.getLogger("thermoch.config")

_KEY = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\.([A-Za-z_][A-Za-z0-9_]*)$")


class ConfigError(ValueError):
    """Custom exception for config syntax and validation errors."""
    pass


def _section_models() -> Dict[str, type]:
    return {name: field.annotation for name, field in RunConfig.model_fields.items()}


def _field_keys(model: type) -> Dict[str, str]:
    """Accepted config key -> model field name (aliases included)."""
    keys = {}
    for name, field in model.model_fields.items():
        keys[name] = name
        if field.alias:
            keys[field.alias] = name
    return keys


def _coerce(model: type, field_name: str, value: str) -> Any:
    annotation = model.model_fields[field_name].annotation
    if get_origin(annotation) is Literal:
        try:
            return int(value)
        except ValueError:
            return value
    return value


def parse_config(text: str) -> RunConfig:
    """
    Parse and validate the flat config text.

    Raises:
        ConfigError: On a syntax error (with line number), an unknown key,
            or a value violating its constraint (with the key name)
    """
    sections = _section_models()
    raw: Dict[str, Dict[str, Any]] = {}
    seen: Dict[str, Tuple[str, int]] = {}

    for lineno, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got '{content}'")
        key, value = (part.strip() for part in content.split("=", 1))
        match = _KEY.match(key)
        if not match:
            raise ConfigError(f"line {lineno}: malformed key '{key}' (expected section.key)")
        if not value:
            raise ConfigError(f"line {lineno}: missing value for '{key}'")
        section, name = match.groups()
        model = sections.get(section)
        if model is None:
            raise ConfigError(f"line {lineno}: unknown key '{key}' (unknown section '{section}')")
        field_name = _field_keys(model).get(name)
        if field_name is None:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        resolved = f"{section}.{field_name}"
        if resolved in seen:
            first_key, first_line = seen[resolved]
            raise ConfigError(
                f"line {lineno}: duplicate key '{key}' (first set as '{first_key}' on line {first_line})"
            )
        seen[resolved] = (key, lineno)
        raw.setdefault(section, {})[field_name] = _coerce(model, field_name, value)

    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        error = exc.errors()[0]
        loc = [str(part) for part in error["loc"]]
        where = ".".join(loc[:2]) if len(loc) >= 2 else (loc[0] if loc else "config")
        raise ConfigError(f"invalid value for '{where}': {error['msg']}") from exc


def load_config(path: Union[str, Path]) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    logger.debug("Loaded config from %s", path)
    return parse_config(text)


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    text = str(value)
    if "#" in text or "\n" in text:
        raise ConfigError(f"value '{text}' cannot be written in the flat config format")
    return text


def serialize_config(cfg: RunConfig) -> str:
    """Inverse of parse_config: every field written with round-trip precision."""
    lines: List[str] = []
    for section in RunConfig.model_fields:
        model: BaseModel = getattr(cfg, section)
        for name, field in type(model).model_fields.items():
            value = getattr(model, name)
            if value is None:
                continue
            lines.append(f"{section}.{field.alias or name} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)
