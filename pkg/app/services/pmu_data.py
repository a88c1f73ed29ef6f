"""PMU data - signal/event-log CSV parsing, status-word decoding, and context slicing."""

import io
import re
from collections import Counter
from typing import Iterable, TextIO, Union

import numpy as np
import pandas as pd

from app.core.logging_config import get_logger
from app.models.schemas import EventLogEntry, EventType, PmuSeries, QualityCell, QualityStats, StatusAssessment
from app.utils.error_handler import FormatError, OutOfRangeError, ParseError, UnsupportedRateError
from app.utils.time_utils import (
    MS_PER_DAY,
    MS_PER_SECOND,
    grid_index,
    grid_timestamp,
    parse_iso_utc,
    to_iso_utc,
)

logger = get_logger(__name__)

SIGNAL_HEADER = ["pmu_id", "timestamp_ms", "voltage", "freq_dev", "status"]
EVENT_LOG_HEADER = ["interconnection", "start_iso", "end_iso", "event_type", "cause"]
MISSING_MARKER = "NaN"

PRE_EVENT_S = 60
POST_EVENT_S = 120
CONTEXT_S = PRE_EVENT_S + POST_EVENT_S

# Modal inter-sample gap (ms) -> frames per second
_GAP_TO_RATE = {33: 30, 34: 30, 16: 60, 17: 60}

_EVENT_TYPE_ALIASES = {
    "lineoutage": EventType.LINE_OUTAGE,
    "line": EventType.LINE_OUTAGE,
    "xfmroutage": EventType.XFMR_OUTAGE,
    "xfmr": EventType.XFMR_OUTAGE,
    "transformeroutage": EventType.XFMR_OUTAGE,
    "frequencyevent": EventType.FREQUENCY_EVENT,
    "frequency": EventType.FREQUENCY_EVENT,
    "oscillationevent": EventType.OSCILLATION_EVENT,
    "oscillation": EventType.OSCILLATION_EVENT,
    "normal": EventType.NORMAL,
}

Stream = Union[TextIO, io.BytesIO, str]


def _read_text(stream: Stream) -> str:
    if isinstance(stream, str):
        return stream
    content = stream.read()
    if isinstance(content, bytes):
        return content.decode("utf-8")
    return content


def _read_table(text: str, header: list[str]) -> pd.DataFrame:
    """Read a headered CSV as strings, mapping pandas tokenizer failures to ParseError."""
    first_line = text.split("\n", 1)[0].strip().lstrip("\ufeff")
    if [c.strip() for c in first_line.split(",")] != header:
        raise FormatError(f"expected header {','.join(header)!r}, got {first_line!r}")
    try:
        frame = pd.read_csv(
            io.StringIO(text),
            dtype=str,
            keep_default_na=False,
            skipinitialspace=True,
            skip_blank_lines=True,
        )
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise ParseError(str(e), line=int(match.group(1)) if match else None) from e
    # Short rows come back as NaN cells even with keep_default_na=False
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        raise ParseError("row has too few fields", line=int(np.argmax(short)) + 2)
    return frame


def _numeric_column(frame: pd.DataFrame, column: str, allow_missing: bool) -> np.ndarray:
    raw = frame[column].str.strip()
    values = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
    invalid = np.isnan(values)
    if allow_missing:
        invalid &= ~raw.isin([MISSING_MARKER, ""]).to_numpy()
    if invalid.any():
        row = int(np.argmax(invalid))
        raise ParseError(f"malformed {column} value {frame[column].iloc[row]!r}", line=row + 2)
    return values


def _infer_rate(timestamps: np.ndarray, pmu_id: str) -> int:
    gaps = np.diff(timestamps)
    if len(gaps) == 0:
        raise UnsupportedRateError(f"PMU {pmu_id}: cannot infer sample rate from a single sample")
    modal_gap = Counter(gaps.tolist()).most_common(1)[0][0]
    # Ties between 16/17 or 33/34 resolve to the same rate
    rate = _GAP_TO_RATE.get(int(modal_gap))
    if rate is None:
        raise UnsupportedRateError(f"PMU {pmu_id}: modal sample gap {modal_gap} ms is not 30 or 60 frames/s")
    return rate


def parse_signal_csv(stream: Stream) -> list[PmuSeries]:
    """
    Parse a signal CSV into one uniform-grid PmuSeries per PMU.

    Args:
        stream: UTF-8 text (or bytes) with header ``pmu_id,timestamp_ms,voltage,freq_dev,status``

    Returns:
        Series in first-appearance order of pmu_id; grid gaps are materialized
        as samples missing on both channels.

    Raises:
        ParseError: Malformed row (carries the 1-based file line number)
        FormatError: Bad header, unsorted pmu_ids, or non-monotone timestamps
        UnsupportedRateError: Inferred rate is neither 30 nor 60 frames/s
    """
    frame = _read_table(_read_text(stream), SIGNAL_HEADER)
    if frame.empty:
        return []

    timestamps = _numeric_column(frame, "timestamp_ms", allow_missing=False)
    voltage = _numeric_column(frame, "voltage", allow_missing=True)
    freq_dev = _numeric_column(frame, "freq_dev", allow_missing=True)
    status = _numeric_column(frame, "status", allow_missing=False)

    bad_int = (timestamps != np.round(timestamps)) | (status != np.round(status)) | (status < 0) | (status > 0xFFFF)
    if bad_int.any():
        row = int(np.argmax(bad_int))
        raise ParseError("timestamp_ms and status must be integers (status 0..65535)", line=row + 2)

    pmu_ids = frame["pmu_id"].str.strip().to_numpy()
    series_list: list[PmuSeries] = []
    seen: set[str] = set()
    # Rows are sorted by (pmu_id, timestamp_ms): each pmu_id forms one contiguous block
    boundaries = np.flatnonzero(pmu_ids[1:] != pmu_ids[:-1]) + 1
    for block in np.split(np.arange(len(frame)), boundaries):
        pmu_id = str(pmu_ids[block[0]])
        if pmu_id in seen:
            raise FormatError(f"rows for PMU {pmu_id} are not contiguous (line {block[0] + 2})")
        seen.add(pmu_id)

        ts = timestamps[block].astype(np.int64)
        steps = np.diff(ts)
        if (steps <= 0).any():
            offending = int(block[int(np.argmax(steps <= 0)) + 1])
            raise FormatError(f"PMU {pmu_id}: non-monotone timestamp at line {offending + 2}")

        rate = _infer_rate(ts, pmu_id)
        t0 = int(ts[0])
        indices = np.rint((ts - t0) * rate / MS_PER_SECOND).astype(np.int64)
        if (np.diff(indices) <= 0).any():
            raise FormatError(f"PMU {pmu_id}: two rows map to the same {rate} frames/s grid slot")

        length = int(indices[-1]) + 1
        v = np.full(length, np.nan)
        f = np.full(length, np.nan)
        s = np.zeros(length, dtype=np.uint16)
        v[indices] = voltage[block]
        f[indices] = freq_dev[block]
        s[indices] = status[block].astype(np.uint16)

        series_list.append(
            PmuSeries(
                pmu_id=pmu_id,
                sample_rate_hz=rate,
                t0_ms=t0,
                voltage=v,
                freq_dev=f,
                status=s,
                voltage_missing=np.isnan(v),
                freq_missing=np.isnan(f),
            )
        )
        gap_count = length - len(block)
        if gap_count:
            logger.debug(f"PMU {pmu_id}: materialized {gap_count} grid gaps")

    logger.debug(f"Parsed {len(frame)} signal rows into {len(series_list)} series")
    return series_list


def write_signal_csv(series_list: Iterable[PmuSeries]) -> str:
    """
    Serialize series back to the signal CSV format.

    Samples missing on both channels with a zero status word are omitted (they
    re-materialize as grid gaps on parse). A missing channel is otherwise
    written as ``NaN``, so a flagged sample keeps its status word.
    """
    lines = [",".join(SIGNAL_HEADER)]
    for series in series_list:
        for i in range(len(series)):
            if series.voltage_missing[i] and series.freq_missing[i] and series.status[i] == 0:
                continue
            v = MISSING_MARKER if series.voltage_missing[i] else repr(float(series.voltage[i]))
            f = MISSING_MARKER if series.freq_missing[i] else repr(float(series.freq_dev[i]))
            ts = grid_timestamp(series.t0_ms, i, series.sample_rate_hz)
            lines.append(f"{series.pmu_id},{ts},{v},{f},{int(series.status[i])}")
    return "\n".join(lines) + "\n"


def decode_status(raw: int) -> StatusAssessment:
    """
    Decode a 16-bit PMU status word.

    Only a word equal to 0 marks the sample usable; bits 3..0 carry the
    trigger reason and bits 5..4 the time-error code.
    """
    raw = int(raw) & 0xFFFF
    return StatusAssessment(
        usable=raw == 0,
        trigger_reason=raw & 0x000F,
        time_error=(raw >> 4) & 0x0003,
        raw=raw,
    )


def status_usable(status: np.ndarray) -> np.ndarray:
    """Vectorized `decode_status(...).usable`."""
    return np.asarray(status) == 0


def normalize_event_type(text: str) -> EventType:
    """Map a free-form event-type string onto EventType (Unknown when unrecognized)."""
    key = re.sub(r"[^0-9a-z]", "", text.lower())
    return _EVENT_TYPE_ALIASES.get(key, EventType.UNKNOWN)


def parse_event_log(stream: Stream) -> list[EventLogEntry]:
    """
    Parse an event-log CSV.

    Args:
        stream: Text with header ``interconnection,start_iso,end_iso,event_type,cause``

    Returns:
        Entries in file order

    Raises:
        ParseError: Unparseable timestamp or start after end (with line number)
    """
    frame = _read_table(_read_text(stream), EVENT_LOG_HEADER)
    entries: list[EventLogEntry] = []
    for row_no, row in enumerate(frame.itertuples(index=False), start=2):
        try:
            start_ms = parse_iso_utc(row.start_iso)
            end_ms = parse_iso_utc(row.end_iso)
        except ValueError as e:
            raise ParseError(f"unparseable timestamp: {e}", line=row_no) from e
        if start_ms > end_ms:
            raise ParseError("start is after end", line=row_no)
        entries.append(
            EventLogEntry(
                interconnection=row.interconnection.strip(),
                start_ms=start_ms,
                end_ms=end_ms,
                event_type=normalize_event_type(row.event_type),
                cause=row.cause,
            )
        )
    unknown = sum(1 for e in entries if e.event_type is EventType.UNKNOWN)
    logger.debug(f"Parsed {len(entries)} event-log entries ({unknown} unknown)")
    return entries


def write_event_log(entries: Iterable[EventLogEntry]) -> str:
    """Serialize entries to the event-log CSV format (minute-aligned times at minute resolution)."""
    lines = [",".join(EVENT_LOG_HEADER)]
    for entry in entries:
        start = to_iso_utc(entry.start_ms, minute_resolution=entry.start_ms % 60_000 == 0)
        end = to_iso_utc(entry.end_ms, minute_resolution=entry.end_ms % 60_000 == 0)
        cause = entry.cause.replace(",", ";").replace("\n", " ")
        lines.append(f"{entry.interconnection},{start},{end},{entry.event_type.value},{cause}")
    return "\n".join(lines) + "\n"


def slice_context(series: PmuSeries, start_ms: int) -> PmuSeries:
    """
    Cut the 180 s analysis context (60 s before, 120 s after `start_ms`).

    Args:
        series: Source series
        start_ms: Event start from the log

    Returns:
        Series of exactly 180 x rate samples with t0 = start - 60 s; samples the
        source does not cover are missing on both channels.

    Raises:
        OutOfRangeError: The context does not overlap the series at all
    """
    rate = series.sample_rate_hz
    length = CONTEXT_S * rate
    t0 = start_ms - PRE_EVENT_S * MS_PER_SECOND
    shift = grid_index(series.t0_ms, t0, rate)

    src_lo, src_hi = max(shift, 0), min(shift + length, len(series))
    if src_lo >= src_hi:
        raise OutOfRangeError(
            f"PMU {series.pmu_id}: context [{to_iso_utc(t0)}, +{CONTEXT_S}s) does not overlap the series"
        )
    dst = slice(src_lo - shift, src_hi - shift)
    src = slice(src_lo, src_hi)

    v = np.full(length, np.nan)
    f = np.full(length, np.nan)
    s = np.zeros(length, dtype=np.uint16)
    v_missing = np.ones(length, dtype=bool)
    f_missing = np.ones(length, dtype=bool)
    v[dst] = series.voltage[src]
    f[dst] = series.freq_dev[src]
    s[dst] = series.status[src]
    v_missing[dst] = series.voltage_missing[src]
    f_missing[dst] = series.freq_missing[src]

    return PmuSeries(
        pmu_id=series.pmu_id,
        sample_rate_hz=rate,
        t0_ms=t0,
        voltage=v,
        freq_dev=f,
        status=s,
        voltage_missing=v_missing,
        freq_missing=f_missing,
        voltage_unit=series.voltage_unit,
    )


def bad_runs(bad: np.ndarray) -> list[int]:
    """Lengths of consecutive True runs in a boolean mask."""
    padded = np.concatenate(([False], np.asarray(bad, dtype=bool), [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return (ends - starts).tolist()


def compute_quality_stats(series_list: Iterable[PmuSeries]) -> QualityStats:
    """
    Summarize missing/bad data per (PMU, UTC day).

    A sample counts as bad when either channel is missing or its status word
    is unusable.
    """
    cells: list[QualityCell] = []
    for series in series_list:
        bad = series.missing | ~status_usable(series.status)
        offsets = np.rint(np.arange(len(series)) * MS_PER_SECOND / series.sample_rate_hz).astype(np.int64)
        days = (series.t0_ms + offsets) // MS_PER_DAY
        for day in np.unique(days):
            in_day = days == day
            runs = bad_runs(bad[in_day])
            count = int(in_day.sum())
            cells.append(
                QualityCell(
                    pmu_id=series.pmu_id,
                    day=int(day),
                    sample_count=count,
                    missing_fraction=sum(runs) / count,
                    gap_lengths=runs,
                )
            )
    logger.debug(f"Computed quality stats for {len(cells)} PMU-days")
    return QualityStats(cells=cells)


__all__ = [
    "CONTEXT_S",
    "bad_runs",
    "compute_quality_stats",
    "decode_status",
    "normalize_event_type",
    "parse_event_log",
    "parse_signal_csv",
    "slice_context",
    "status_usable",
    "write_event_log",
    "write_signal_csv",
]
