"""
Config validation utilities for schema compliance.

Used by the CLI, the experiment API endpoint and the validate_config script.
"""

import hashlib
import json
import logging
import os
from pathlib import Path
from typing import Any, Optional, Union

from pydantic import ValidationError

from sivnode.core.errors import ConfigError
from sivnode.models import ExperimentConfig

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).parent.parent / "default-config.json"


def merge_overrides(base: dict, overrides: dict) -> dict:
    """Recursive dict merge; lists and scalars in `overrides` replace the base value."""
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_overrides(merged[key], value)
        else:
            merged[key] = value
    return merged


def validate_config(data: Any) -> tuple[Optional[ExperimentConfig], list[dict]]:
    """
    Validate a config document.

    Returns:
        Tuple of (ExperimentConfig or None, list of error dicts for 422 response).
    """
    if not isinstance(data, dict):
        return None, [
            {
                "loc": ("config",),
                "msg": f"Config must be an object, got {type(data).__name__}",
                "type": "type_error",
            }
        ]
    try:
        return ExperimentConfig(**data), []
    except ValidationError as e:
        errors = []
        for err in e.errors():
            errors.append(
                {
                    "loc": ("config",) + tuple(err["loc"]),
                    "msg": err["msg"],
                    "type": err.get("type", "value_error"),
                }
            )
        return None, errors


def format_errors(errors: list[dict]) -> list[str]:
    """One line per error: dotted field path, then the message."""
    return [f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in errors]


def read_config_file(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as config_file:
            return json.load(config_file)
    except FileNotFoundError:
        raise ConfigError(
            f"Config file not found: {path}",
            [{"loc": ("config",), "msg": f"file not found: {path}", "type": "file_error"}],
        )
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"Invalid JSON in {path}: {e}",
            [{"loc": ("config",), "msg": f"invalid JSON at line {e.lineno}: {e.msg}", "type": "json_error"}],
        )


def default_config_data() -> dict:
    """Shipped defaults, or an empty document (model defaults) when the file is absent."""
    if DEFAULT_CONFIG_PATH.exists():
        return read_config_file(DEFAULT_CONFIG_PATH)
    logger.debug("No default config at %s; using schema defaults", DEFAULT_CONFIG_PATH)
    return {}


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """
    Read a config file (or SIVNODE_CONFIG, or the shipped defaults), merge it
    over the defaults and validate. Raises ConfigError with the error list.
    """
    path = path or os.environ.get("SIVNODE_CONFIG")
    data = default_config_data()
    if path:
        data = merge_overrides(data, read_config_file(path))
    if overrides:
        data = merge_overrides(data, overrides)
    config, errors = validate_config(data)
    if errors:
        raise ConfigError(f"Config has {len(errors)} schema violation(s)", errors)
    logger.debug("Loaded config from %s", path or DEFAULT_CONFIG_PATH)
    return config


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON dump; provenance notes are not part of it."""
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
