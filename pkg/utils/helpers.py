"""
Helper utilities shared by the services, controllers and commands
"""

import hashlib
import logging
import re
from datetime import datetime
from typing import Any, Dict

import numpy as np

logger = logging.getLogger(__name__)


def format_float(value: float) -> str:
    """Serialize a float with 17 significant digits (round-trips exactly)"""
    return f"{float(value):.17g}"


def sanitize_filename(filename: str) -> str:
    """
    Sanitize a check or run name for use as a file name

    Args:
        filename: Original name

    Returns:
        Name with only [A-Za-z0-9._-] characters
    """
    cleaned = re.sub(r"[^A-Za-z0-9._-]+", "_", filename).strip("._")
    return cleaned[:200] or "unnamed"


def merge_dicts(*dicts: Dict[str, Any]) -> Dict[str, Any]:
    """
    Recursively merge dictionaries; later values win

    Args:
        *dicts: Dictionaries to merge

    Returns:
        Merged dictionary
    """
    result: Dict[str, Any] = {}
    for d in dicts:
        for key, value in (d or {}).items():
            if isinstance(value, dict) and isinstance(result.get(key), dict):
                result[key] = merge_dicts(result[key], value)
            else:
                result[key] = value
    return result


def digest_arrays(*arrays: np.ndarray, extra: str = "") -> str:
    """Short SHA-256 over the raw little-endian bytes of the given arrays"""
    h = hashlib.sha256(extra.encode("utf-8"))
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


class ProgressTracker:
    """Simple progress tracker for long-running solver loops"""

    def __init__(self, total: int, description: str = "Processing"):
        self.total = total
        self.current = 0
        self.description = description
        self.start_time = datetime.now()

    def update(self, increment: int = 1, **fields: float):
        """Update progress; extra fields are appended to the log line"""
        self.current += increment
        percentage = (self.current / self.total) * 100 if self.total > 0 else 0
        extra = "".join(f", {k}={v:.4e}" for k, v in fields.items())
        logger.debug(f"{self.description}: {self.current}/{self.total} ({percentage:.1f}%){extra}")

    @property
    def elapsed(self) -> float:
        return (datetime.now() - self.start_time).total_seconds()

    def complete(self, **fields: float):
        """Mark as complete"""
        extra = "".join(f", {k}={v:.4e}" for k, v in fields.items())
        logger.info(f"{self.description} completed after {self.current} iterations in {self.elapsed:.2f} seconds{extra}")
