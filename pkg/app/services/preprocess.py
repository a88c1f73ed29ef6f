"""Preprocess - onset alignment, 2-second window extraction, quality gate, and survival statistics."""

from collections import Counter
from typing import Optional, Sequence, Union

import numpy as np

from app.core.logging_config import get_logger
from app.models.schemas import (
    CandidateWindow,
    Channel,
    EventType,
    EventWindow,
    PmuSeries,
    QualityStats,
    Rejection,
    SurvivalCurve,
)
from app.services.pmu_data import status_usable
from app.utils.error_handler import (
    EmptyInputError,
    InsufficientDataError,
    InvalidParameterError,
    NoOnsetError,
    OutOfRangeError,
)
from app.utils.time_utils import grid_index, grid_timestamp

logger = get_logger(__name__)

FRAME_S = 2
WINDOW_SAMPLES = 120
MAX_BAD_FRACTION = 0.05
OUTLIER_ROBUST_SDS = 10.0
MAD_TO_SD = 1.4826
ZSCORE_CONSTANT = 0.6745
# Robust-sd floors for the outlier screen: relative for voltage, Hz for frequency
VOLTAGE_SD_FLOOR = 0.02
FREQUENCY_SD_FLOOR_HZ = 0.02


def modified_zscore(x: Sequence[float], missing: Optional[Sequence[bool]] = None) -> np.ndarray:
    """
    Robust z-score 0.6745 * (x - median) / MAD over the non-missing entries.

    Args:
        x: Values (NaN counts as missing)
        missing: Optional mask; True entries are excluded and scored 0

    Returns:
        Scores, 0 at missing positions and everywhere when MAD is 0

    Raises:
        InsufficientDataError: Fewer than 3 valid values
    """
    values = np.asarray(x, dtype=np.float64)
    valid = np.isfinite(values)
    if missing is not None:
        valid &= ~np.asarray(missing, dtype=bool)
    if valid.sum() < 3:
        raise InsufficientDataError(f"modified z-score needs >= 3 valid samples, got {int(valid.sum())}")

    scores = np.zeros(len(values))
    sample = values[valid]
    median = np.median(sample)
    mad = np.median(np.abs(sample - median))
    if mad == 0:
        return scores
    scores[valid] = ZSCORE_CONSTANT * (sample - median) / mad
    return scores


def _first_differences(values: np.ndarray, missing: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First differences; the change into sample i is stored at i."""
    diffs = np.full(len(values), np.nan)
    diffs[1:] = np.diff(values)
    diff_missing = np.ones(len(values), dtype=bool)
    diff_missing[1:] = missing[1:] | missing[:-1]
    return diffs, diff_missing


def locate_onset(contexts: Sequence[PmuSeries], channel: Union[Channel, str] = Channel.BOTH) -> int:
    """
    Align an event onset to the sample grid by voting across PMUs.

    Each PMU contributes the grid timestamps where the selected channel's
    sample-to-sample change has the most extreme modified z-score; the
    timestamp named by the most PMUs wins, ties going to the earliest.

    Args:
        contexts: 180 s context series sharing one grid
        channel: voltage, frequency, or both (per PMU the channel with the
            larger extreme score contributes)

    Returns:
        Onset timestamp, epoch ms

    Raises:
        EmptyInputError: No contexts
        NoOnsetError: No PMU yields a usable score
    """
    if not contexts:
        raise EmptyInputError("locate_onset needs at least one context")
    channel = Channel(channel)

    votes: Counter[int] = Counter()
    for context in contexts:
        candidates: list[tuple[float, np.ndarray]] = []
        if channel in (Channel.VOLTAGE, Channel.BOTH):
            candidates.append(_channel_extremes(context.voltage, context.voltage_missing))
        if channel in (Channel.FREQUENCY, Channel.BOTH):
            candidates.append(_channel_extremes(context.freq_dev, context.freq_missing))
        peak, indices = max(candidates, key=lambda c: c[0])
        if len(indices) == 0:
            logger.debug(f"PMU {context.pmu_id}: no onset candidate")
            continue
        for index in indices:
            votes[grid_timestamp(context.t0_ms, int(index), context.sample_rate_hz)] += 1

    if not votes:
        raise NoOnsetError(f"none of {len(contexts)} PMUs produced an onset candidate")
    best = max(votes.values())
    onset = min(ts for ts, count in votes.items() if count == best)
    logger.debug(f"Onset located at {onset} ms with {best}/{len(contexts)} PMU votes")
    return onset


def _channel_extremes(values: np.ndarray, missing: np.ndarray) -> tuple[float, np.ndarray]:
    """Peak |score| of the channel's transitions and the grid indices attaining it."""
    diffs, diff_missing = _first_differences(values, missing)
    try:
        scores = np.abs(modified_zscore(diffs, diff_missing))
    except InsufficientDataError:
        return 0.0, np.array([], dtype=np.int64)

    peak = float(scores.max())
    if peak == 0:
        # Zero MAD (e.g. noise-free signal): rank by raw deviation, which outranks any finite score
        valid = np.isfinite(diffs) & ~diff_missing
        scores = np.zeros(len(diffs))
        scores[valid] = np.abs(diffs[valid] - np.median(diffs[valid]))
        if scores.max() == 0:
            return 0.0, np.array([], dtype=np.int64)
        peak = float("inf")
    return peak, np.flatnonzero(scores == scores.max())


def _resample_to_window(values: np.ndarray) -> np.ndarray:
    """Linear interpolation of an m-sample frame onto 2m half-step positions."""
    m = len(values)
    positions = np.arange(WINDOW_SAMPLES) * (m / WINDOW_SAMPLES)
    return np.interp(positions, np.arange(m), values)


def _frame(
    context: PmuSeries,
    frame_index: int,
    event_id: int,
    label: EventType,
    onset_ms: int,
) -> CandidateWindow:
    rate = context.sample_rate_hz
    per_frame = FRAME_S * rate
    lo = frame_index * per_frame
    window = slice(lo, lo + per_frame)

    v = np.where(context.voltage_missing[window], np.nan, context.voltage[window])
    f = np.where(context.freq_missing[window], np.nan, context.freq_dev[window])

    return CandidateWindow(
        event_id=event_id,
        pmu_id=context.pmu_id,
        label=label,
        onset_ms=onset_ms,
        frame_start_ms=grid_timestamp(context.t0_ms, lo, rate),
        samples_v=v,
        samples_f=f,
        missing_v=context.voltage_missing[window],
        missing_f=context.freq_missing[window],
        status=context.status[window],
    )


def extract_window(
    context: PmuSeries,
    onset_ms: int,
    event_id: int = 0,
    label: EventType = EventType.UNKNOWN,
) -> CandidateWindow:
    """
    Return the half-open 2 s frame [t, t + 2 s) of the context that contains the onset.

    Frames tile the context from its first sample and keep the native rate:
    a 30 frames/s frame holds 60 samples. The quality gate resamples it
    onto the canonical 120 points after cleaning.

    Raises:
        OutOfRangeError: Onset lies outside the context span
    """
    rate = context.sample_rate_hz
    index = grid_index(context.t0_ms, onset_ms, rate)
    if not 0 <= index < len(context):
        raise OutOfRangeError(f"onset {onset_ms} ms lies outside the context of PMU {context.pmu_id}")
    frame_index = index // (FRAME_S * rate)
    if (frame_index + 1) * FRAME_S * rate > len(context):
        raise OutOfRangeError(f"onset {onset_ms} ms falls in an incomplete trailing frame")
    return _frame(context, frame_index, event_id, label, onset_ms)


def sample_normal_window(
    context: PmuSeries,
    rng: np.random.Generator,
    event_id: int = 0,
    exclude_onset_ms: Optional[int] = None,
) -> CandidateWindow:
    """
    Draw a uniformly random 2 s frame as a normal-condition window.

    Args:
        context: Context series
        rng: Random generator
        event_id: Identifier recorded on the window
        exclude_onset_ms: Optional known onset whose frame must not be drawn
    """
    per_frame = FRAME_S * context.sample_rate_hz
    frames = np.arange(len(context) // per_frame)
    if exclude_onset_ms is not None:
        excluded = grid_index(context.t0_ms, exclude_onset_ms, context.sample_rate_hz) // per_frame
        frames = frames[frames != excluded]
    if len(frames) == 0:
        raise OutOfRangeError(f"PMU {context.pmu_id}: no event-free frame available")
    frame_index = int(rng.choice(frames))
    start = grid_timestamp(context.t0_ms, frame_index * per_frame, context.sample_rate_hz)
    return _frame(context, frame_index, event_id, EventType.NORMAL, start)


def _outliers(values: np.ndarray, usable: np.ndarray, floor: float) -> np.ndarray:
    """Samples further than 10 robust sds from the window median."""
    if not usable.any():
        return np.zeros(len(values), dtype=bool)
    sample = values[usable]
    median = np.median(sample)
    robust_sd = max(MAD_TO_SD * np.median(np.abs(sample - median)), floor)
    flagged = np.zeros(len(values), dtype=bool)
    flagged[usable] = np.abs(sample - median) > OUTLIER_ROBUST_SDS * robust_sd
    return flagged


def _interpolate(values: np.ndarray, bad: np.ndarray) -> np.ndarray:
    """Linear interpolation across bad samples; edges hold the nearest good value."""
    if not bad.any():
        return values.copy()
    positions = np.arange(len(values))
    good = ~bad
    return np.interp(positions, positions[good], values[good])


def bad_samples(window: CandidateWindow) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel bad masks: missing, non-finite, unusable status, or outlier."""
    unusable = ~status_usable(window.status)
    v_bad = window.missing_v | ~np.isfinite(window.samples_v) | unusable
    f_bad = window.missing_f | ~np.isfinite(window.samples_f) | unusable

    v_median = np.median(window.samples_v[~v_bad]) if (~v_bad).any() else 0.0
    v_bad |= _outliers(window.samples_v, ~v_bad, VOLTAGE_SD_FLOOR * max(abs(v_median), 1e-12))
    f_bad |= _outliers(window.samples_f, ~f_bad, FREQUENCY_SD_FLOOR_HZ)
    return v_bad, f_bad


def quality_gate(window: CandidateWindow) -> Union[EventWindow, Rejection]:
    """
    Accept a candidate window (interpolating its bad samples) or reject it.

    A sample position is bad when either channel is missing, non-finite,
    flagged by its status word, or an engineering-intuition outlier. More
    than 5% bad positions rejects the window. The fraction is taken over the
    native-rate samples; a 60-sample frame is resampled onto 120 points
    only after its bad samples are interpolated.

    Returns:
        EventWindow with quality = bad fraction, or a Rejection
    """
    v_bad, f_bad = bad_samples(window)
    bad = v_bad | f_bad
    fraction = float(bad.sum()) / len(window)

    if fraction > MAX_BAD_FRACTION:
        return Rejection(
            event_id=window.event_id,
            pmu_id=window.pmu_id,
            bad_fraction=fraction,
            reason=f"{int(bad.sum())}/{len(window)} bad samples exceed {MAX_BAD_FRACTION:.0%}",
        )
    samples_v = _interpolate(window.samples_v, v_bad)
    samples_f = _interpolate(window.samples_f, f_bad)
    if len(window) != WINDOW_SAMPLES:
        samples_v, samples_f = _resample_to_window(samples_v), _resample_to_window(samples_f)
    return EventWindow(
        event_id=window.event_id,
        pmu_id=window.pmu_id,
        label=window.label,
        samples_v=samples_v,
        samples_f=samples_f,
        onset_ms=window.onset_ms,
        quality=fraction,
    )


def _cell_statistic(stats: QualityStats, measure: str) -> np.ndarray:
    if measure == "missing_fraction":
        return np.array([cell.missing_fraction for cell in stats.cells], dtype=np.float64)
    if measure == "gap_length":
        return np.array([g for cell in stats.cells for g in cell.gap_lengths], dtype=np.float64)
    raise InvalidParameterError(f"unknown survival measure {measure!r}")


def survival_function(
    stats: QualityStats,
    ks: Sequence[float],
    measure: str = "missing_fraction",
) -> SurvivalCurve:
    """
    Empirical survival function S(k) = Pr{statistic > k}.

    Args:
        stats: Per (PMU, day) quality cells
        ks: Ascending thresholds
        measure: 'missing_fraction' (per PMU-day) or 'gap_length' (per bad run)

    Returns:
        SurvivalCurve over ks; S is 0 everywhere when no statistic exists
        (e.g. no gaps at all)

    Raises:
        EmptyInputError: stats has no cells
        InvalidParameterError: ks not ascending or unknown measure
    """
    if len(stats) == 0:
        raise EmptyInputError("survival_function needs at least one quality cell")
    grid = np.asarray(ks, dtype=np.float64)
    if np.any(np.diff(grid) < 0):
        raise InvalidParameterError("ks must be sorted ascending")

    values = np.sort(_cell_statistic(stats, measure))
    if len(values) == 0:
        survival = np.zeros(len(grid))
    else:
        # count of values > k = n - (number of values <= k)
        survival = (len(values) - np.searchsorted(values, grid, side="right")) / len(values)
    return SurvivalCurve(measure=measure, ks=grid.tolist(), survival=survival.tolist())
