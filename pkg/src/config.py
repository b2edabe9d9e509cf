#!/usr/bin/env python3
"""
Configuration management for the RMT spectral pruning toolkit.

Defaults live as class attributes on Config. Experiment settings live in
dataclasses owned by each module (TrainConfig, PruneConfig, SpikedSpec,
RegressionProblem); this module turns `key = value` text files and CLI
overrides into those dataclasses with precedence
CLI flag > config file > dataclass default.
"""

import dataclasses
import logging
import os
import typing
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar

from .errors import ConfigError, RMTPruneError

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

logger = logging.getLogger(__name__)

T = TypeVar("T")

_TRUE_WORDS = {"1", "true", "yes", "on"}
_FALSE_WORDS = {"0", "false", "no", "off"}


class Config:
    """Base configuration class"""

    # Application settings
    APP_NAME = "RMT Spectral Pruning Toolkit"
    VERSION = "1.0.0"

    # Only environment knob: worker threads for seed/layer fan-out
    NUM_THREADS = max(1, int(os.getenv("RMTPRUNE_THREADS", "1") or "1"))

    # Logging
    LOG_LEVEL = "INFO"
    LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

    # BEMA / fit-test defaults
    BEMA_ALPHA = 0.25
    BEMA_BETA = 0.8
    FIT_TAU = 0.3

    # Layers narrower than this are exempt from spectral pruning
    MIN_SPECTRAL_DIM = 32

    # Training
    DEFAULT_BATCH_SIZE = 128

    # L2 weight of the noise-injection loss curve
    NOISE_INJECTION_MU = 0.01

    # File formats
    PMAT_MAGIC = b"PMAT0001"
    CHECKPOINT_MAGIC = "RMTCKPT1"
    CSV_FLOAT_FORMAT = "%.17g"

    @classmethod
    def get_config(cls) -> "Config":
        """Get the configuration instance"""
        return cls()


# Global configuration instance
config = Config.get_config()


def get_config() -> Config:
    """Get the current configuration instance"""
    return config


def print_config_info():
    """Print current configuration information"""
    cfg = get_config()

    print(f"Application: {cfg.APP_NAME} {cfg.VERSION}")
    print(f"Threads (RMTPRUNE_THREADS): {cfg.NUM_THREADS}")
    print(f"Log Level: {cfg.LOG_LEVEL}")
    print(f"BEMA alpha/beta, fit tau: {cfg.BEMA_ALPHA}/{cfg.BEMA_BETA}, {cfg.FIT_TAU}")
    print(f"Minimum spectral dimension: {cfg.MIN_SPECTRAL_DIM}")


def read_config_file(path) -> Dict[str, str]:
    """
    Parse a line-oriented `key = value` file.

    Blank lines and lines starting with '#' are skipped. A repeated key is
    an error rather than a silent override.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")

    values: Dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key '{key}'")
            values[key] = value

    logger.debug(f"Read {len(values)} settings from {path}")
    return values


def parse_overrides(pairs) -> Dict[str, str]:
    """Turn repeated `--set key=value` arguments into a dict"""
    values: Dict[str, str] = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"Override must look like key=value, got {pair!r}")
        key, value = (part.strip() for part in pair.split("=", 1))
        values[key] = value
    return values


def convert_value(text: str, annotation: Any, key: str = "") -> Any:
    """Convert a config string according to a dataclass field annotation"""
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)

    if origin is typing.Union and type(None) in args:
        if text.strip().lower() in ("", "none", "null"):
            return None
        inner = next(a for a in args if a is not type(None))
        return convert_value(text, inner, key)

    if origin in (tuple, typing.Tuple):
        item_type = args[0] if args else float
        parts = [p.strip() for p in text.split(",") if p.strip()]
        return tuple(convert_value(p, item_type, key) for p in parts)

    if origin is typing.Literal:
        if text not in args:
            raise ConfigError(f"'{key}' must be one of {list(args)}, got {text!r}")
        return text

    try:
        if annotation is bool:
            lowered = text.strip().lower()
            if lowered in _TRUE_WORDS:
                return True
            if lowered in _FALSE_WORDS:
                return False
            raise ValueError(text)
        if annotation is int:
            return int(text)
        if annotation is float:
            return float(text)
        if annotation is str:
            return text
    except ValueError:
        raise ConfigError(f"Cannot read '{key}' = {text!r} as {getattr(annotation, '__name__', annotation)}")

    raise ConfigError(f"Unsupported config field type for '{key}': {annotation}")


def apply_config(cls: Type[T], file_values: Optional[Mapping[str, Any]] = None,
                 overrides: Optional[Mapping[str, Any]] = None) -> T:
    """
    Build a dataclass instance from defaults, then file values, then overrides.

    String values are converted by the field annotation; already-typed
    override values (from argparse) are taken as given. Any key that is
    not a field of `cls` is rejected.
    """
    if not dataclasses.is_dataclass(cls):
        raise ConfigError(f"{cls!r} is not a dataclass")

    hints = typing.get_type_hints(cls)
    field_names = [f.name for f in dataclasses.fields(cls) if f.init]

    merged: Dict[str, Any] = {}
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if key not in field_names:
                raise ConfigError(
                    f"Unknown setting '{key}' for {cls.__name__}; "
                    f"accepted keys: {', '.join(field_names)}"
                )
            if value is None:
                continue
            merged[key] = convert_value(value, hints[key], key) if isinstance(value, str) else value

    try:
        return cls(**merged)
    except RMTPruneError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid {cls.__name__} settings: {e}") from e


def config_snapshot(instance) -> Dict[str, Any]:
    """JSON-friendly view of a config dataclass for manifests"""
    snapshot = dataclasses.asdict(instance)
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in snapshot.items()}


if __name__ == "__main__":
    print("RMT Spectral Pruning Configuration")
    print("=" * 50)
    print_config_info()
