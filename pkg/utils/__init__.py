"""Utils package initialization"""

from .helpers import (
    format_float,
    sanitize_filename,
    merge_dicts,
    digest_arrays,
    ProgressTracker
)

__all__ = [
    'format_float',
    'sanitize_filename',
    'merge_dicts',
    'digest_arrays',
    'ProgressTracker'
]
