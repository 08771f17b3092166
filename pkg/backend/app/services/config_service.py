import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

from app.core.exceptions import ConfigError
from app.schemas.run import PRESETS, RunConfig

logger = logging.getLogger(__name__)


def deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge override into a copy of base"""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        document = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}")
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return document


def resolve_run_config(
    preset: Optional[str] = None,
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Dict[str, Any]]] = None,
) -> RunConfig:
    """
    Build the effective configuration.

    Layers, lowest first: model defaults, preset, config file, explicit
    overrides (CLI flags). Unknown keys fail validation by name.
    """
    merged: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        merged = deep_merge(merged, PRESETS[preset])
    if config_path is not None:
        merged = deep_merge(merged, load_config_file(config_path))
    if overrides:
        cleaned = {
            section: {key: value for key, value in values.items() if value is not None}
            for section, values in overrides.items()
        }
        merged = deep_merge(merged, {section: values for section, values in cleaned.items() if values})
    config = RunConfig(**merged)
    logger.debug(f"Effective configuration: {config.model_dump_json()}")
    return config
