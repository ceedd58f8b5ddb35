"""
Result Artifacts
Run manifests, JSON and CSV writers shared by every command-line entry point
"""

import json
import logging
import math
import re
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from flat_surface import format_rational

logger = logging.getLogger(__name__)

VERSION = "0.3.0"


@dataclass
class RunManifest:
    """Provenance block embedded under "manifest" in every JSON artifact"""

    command_line: List[str]
    settings: Dict[str, Any]
    version: str = VERSION
    wall_time: float = 0.0
    error_estimates: Dict[str, Any] = field(default_factory=dict)
    started: float = field(default_factory=time.perf_counter, repr=False)

    def finish(self) -> "RunManifest":
        self.wall_time = time.perf_counter() - self.started
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command_line": list(self.command_line),
            "settings": self.settings,
            "version": self.version,
            "wall_time": self.wall_time,
            "error_estimates": self.error_estimates,
        }


def to_plain(value: Any) -> Any:
    """
    Convert a result tree into JSON-ready values

    Rationals become "n/d" strings, numpy and mpmath numbers become floats,
    non-finite floats become the strings "inf", "-inf" and "nan".
    """
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, Fraction):
        return format_rational(value)
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(value, dict):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_plain(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if hasattr(value, "to_dict"):
        return to_plain(value.to_dict())
    try:
        number = float(value)
    except (TypeError, ValueError):
        logger.warning(f"Serialising unsupported value of type {type(value).__name__} as text")
        return str(value)
    if math.isnan(number):
        return "nan"
    if math.isinf(number):
        return "inf" if number > 0 else "-inf"
    return number


# Finite floats travel through json.dumps as tagged strings and are unquoted afterwards
_FLOAT_TAG = "\x00float:"
_FLOAT_TOKEN = re.compile(r'"\\u0000float:([^"]+)"')


def format_float(value: float) -> str:
    """17 significant digits, keeping a decimal point on integral values"""
    text = f"{value:.17g}"
    return text if any(ch in text for ch in ".en") else text + ".0"


def _tag_floats(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _tag_floats(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_tag_floats(v) for v in value]
    if isinstance(value, float):
        return _FLOAT_TAG + format_float(value)
    return value


def dumps(payload: Dict[str, Any], manifest: Optional[RunManifest] = None) -> str:
    """Render an artifact as pretty-printed JSON with sorted keys"""
    body = dict(payload)
    if manifest is not None:
        body["manifest"] = manifest.to_dict()
    text = json.dumps(_tag_floats(to_plain(body)), indent=2, sort_keys=True, ensure_ascii=False)
    return _FLOAT_TOKEN.sub(r"\1", text) + "\n"


def write_json(path: Any, payload: Dict[str, Any], manifest: Optional[RunManifest] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload, manifest), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def write_csv(path: Any, frame) -> Path:
    """Write a pandas frame with a header row and full double precision"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote {path} ({len(frame)} rows)")
    return path


def companion_csv(json_path: Any) -> Path:
    """CSV path written next to a JSON artifact"""
    return Path(json_path).with_suffix(".csv")
