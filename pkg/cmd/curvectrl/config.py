"""Study configuration files and environment settings."""

import os
from pathlib import Path
from typing import Any, Dict, Union

import structlog
import yaml
from pydantic import ValidationError

from .exceptions import config_error
from .models import StudyConfig

logger = structlog.get_logger()

# Configuration
CONFIG_PATH = os.getenv("CURVECTRL_CONFIG_PATH", "curvectrl.yaml")
LOG_LEVEL = os.getenv("CURVECTRL_LOG_LEVEL", "info")


def threads() -> int:
    """Concurrent study levels, from CURVECTRL_THREADS (default 1)."""
    raw = os.getenv("CURVECTRL_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        logger.warning("config_threads_invalid", value=raw)
        return 1
    return max(value, 1)


def parse_config(raw: Any, source: str = "<memory>") -> StudyConfig:
    """Validate a mapping of sections into a StudyConfig."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise config_error(f"{source}: top level must be a mapping of sections")
    try:
        return StudyConfig.model_validate(raw)
    except ValidationError as exc:
        logger.error("config_invalid", path=source, errors=exc.error_count())
        raise config_error(f"{source}: {exc}") from exc


def loads_config(text: str, source: str = "<memory>") -> StudyConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        logger.error("config_yaml_parse_error", error=str(exc), path=source)
        raise config_error(f"{source}: {exc}") from exc
    return parse_config(raw, source)


def load_config(path: Union[str, Path, None] = None) -> StudyConfig:
    """Load and validate a YAML study configuration.

    Raises:
        ConfigError: missing file, malformed YAML or invalid values
    """
    path = Path(path or CONFIG_PATH)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        logger.warning("config_not_found", path=str(path))
        raise config_error(f"config file not found: {path}") from exc
    except OSError as exc:
        logger.warning("config_read_failed", error=str(exc))
        raise config_error(f"cannot read {path}: {exc}") from exc
    config = loads_config(text, str(path))
    logger.info("config_loaded", path=str(path), mode=config.study.mode, levels=config.domain.levels)
    return config


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def config_to_dict(config: StudyConfig) -> Dict[str, Any]:
    """Every key with its effective value, tuples as lists."""
    return _plain(config.model_dump(mode="python"))


def dump_config(config: StudyConfig) -> str:
    """Normal form: all defaults filled in, keys sorted."""
    return yaml.safe_dump(config_to_dict(config), default_flow_style=False, sort_keys=True)


def write_config(config: StudyConfig, path: Union[str, Path]) -> None:
    Path(path).write_text(dump_config(config), encoding="utf-8")
