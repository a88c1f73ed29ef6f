"""Timestamp helpers: epoch milliseconds, ISO-8601 UTC, and uniform sample grids."""

from datetime import datetime, timezone

MS_PER_SECOND = 1000
MS_PER_MINUTE = 60_000
MS_PER_DAY = 86_400_000


def grid_timestamp(t0_ms: int, index: int, sample_rate_hz: int) -> int:
    """Epoch-ms timestamp of grid sample `index` for a series starting at `t0_ms`."""
    return t0_ms + round(index * MS_PER_SECOND / sample_rate_hz)


def grid_index(t0_ms: int, timestamp_ms: int, sample_rate_hz: int) -> int:
    """Nearest grid index of `timestamp_ms`; may be negative or past the end."""
    return round((timestamp_ms - t0_ms) * sample_rate_hz / MS_PER_SECOND)


def truncate_to_minute(timestamp_ms: int) -> int:
    return timestamp_ms - timestamp_ms % MS_PER_MINUTE


def parse_iso_utc(text: str) -> int:
    """
    Parse an ISO-8601 timestamp into epoch milliseconds.

    Minute resolution ("2016-05-01T10:23") is accepted; naive timestamps are
    taken as UTC.

    Args:
        text: ISO-8601 string

    Returns:
        Epoch milliseconds

    Raises:
        ValueError: If the string is not ISO-8601
    """
    parsed = datetime.fromisoformat(text.strip())
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return round(parsed.timestamp() * MS_PER_SECOND)


def to_iso_utc(timestamp_ms: int, minute_resolution: bool = False) -> str:
    """Render epoch milliseconds as an ISO-8601 UTC string (no offset suffix)."""
    moment = datetime.fromtimestamp(timestamp_ms / MS_PER_SECOND, tz=timezone.utc)
    if minute_resolution:
        return moment.strftime("%Y-%m-%dT%H:%M")
    if timestamp_ms % MS_PER_SECOND:
        return moment.strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3]
    return moment.strftime("%Y-%m-%dT%H:%M:%S")
