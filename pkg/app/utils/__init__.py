"""Utility functions for the PMU event identifier."""

from app.utils.error_handler import PmuEventError, format_error_message
from app.utils.time_utils import grid_index, grid_timestamp, parse_iso_utc, to_iso_utc

__all__ = [
    "PmuEventError",
    "format_error_message",
    "grid_index",
    "grid_timestamp",
    "parse_iso_utc",
    "to_iso_utc",
]
