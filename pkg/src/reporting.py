#!/usr/bin/env python3
"""
Report writers and the per-run manifest.

Every writer goes through matrixio's atomic write helpers, and all float
columns use one fixed format so identical runs give identical bytes.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .config import get_config
from .errors import ConfigError, exit_code_for
from .matrixio import atomic_write_text

logger = logging.getLogger(__name__)


def _json_default(obj: Any):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    if isinstance(obj, pd.DataFrame):
        return frame_records(obj)
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def to_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True) + "\n"


def frame_records(frame: pd.DataFrame) -> List[Dict[str, Any]]:
    return json.loads(frame.to_json(orient="records", double_precision=15))


def write_csv(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    atomic_write_text(path, frame.to_csv(index=False, float_format=get_config().CSV_FLOAT_FORMAT))
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_json(obj: Any, path) -> Path:
    path = Path(path)
    atomic_write_text(path, to_json(obj))
    logger.info(f"Wrote {path}")
    return path


def write_report(frame: pd.DataFrame, path) -> Path:
    """CSV or JSON by file suffix"""
    suffix = Path(path).suffix.lower()
    if suffix == ".csv":
        return write_csv(frame, path)
    if suffix == ".json":
        return write_json({"records": frame_records(frame)}, path)
    raise ConfigError(f"report path {path} must end in .csv or .json")


@dataclass
class RunManifest:
    subcommand: str
    argv: List[str] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=list)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    tool_version: str = get_config().VERSION
    wall_clock_seconds: float = 0.0
    error: Optional[Dict[str, Any]] = None

    def record_output(self, path) -> Path:
        self.outputs.append(str(path))
        return Path(path)

    def record_error(self, exc: BaseException):
        self.error = {"type": type(exc).__name__, "message": str(exc), "exit_code": exit_code_for(exc)}

    def write(self, path) -> Path:
        return write_json(dataclasses.asdict(self), path)


def manifest_path_for(primary_output) -> Path:
    primary = Path(primary_output)
    return primary.with_name(primary.name + ".manifest.json")
