"""Tests for onset location, window extraction, the quality gate and survival curves."""

import numpy as np
import pytest

from app.models.schemas import CandidateWindow, EventType, EventWindow, QualityCell, QualityStats, Rejection
from app.services.preprocess import (
    WINDOW_SAMPLES,
    extract_window,
    locate_onset,
    modified_zscore,
    quality_gate,
    sample_normal_window,
    survival_function,
)
from app.utils.error_handler import (
    EmptyInputError,
    InsufficientDataError,
    InvalidParameterError,
    NoOnsetError,
    OutOfRangeError,
)
from app.utils.time_utils import grid_timestamp

T0 = 1_462_096_800_000


def _step(length, index, before=1.0, after=0.95):
    values = np.full(length, before)
    values[index:] = after
    return values


def _candidate(voltage, freq=None, status=None):
    voltage = np.asarray(voltage, dtype=np.float64)
    freq = np.zeros(len(voltage)) if freq is None else np.asarray(freq, dtype=np.float64)
    return CandidateWindow(
        event_id=1,
        pmu_id="PMU001",
        label=EventType.LINE_OUTAGE,
        onset_ms=T0,
        frame_start_ms=T0,
        samples_v=voltage,
        samples_f=freq,
        missing_v=np.isnan(voltage),
        missing_f=np.isnan(freq),
        status=np.zeros(len(voltage), dtype=np.uint16) if status is None else status,
    )


# ============================================================================
# Modified z-score
# ============================================================================


def test_modified_zscore_values():
    """Test that scores follow 0.6745 (x - median) / MAD."""
    scores = modified_zscore([1.0, 2.0, 3.0, 4.0, 100.0])

    np.testing.assert_allclose(scores, 0.6745 * np.array([-2.0, -1.0, 0.0, 1.0, 97.0]))


def test_modified_zscore_zero_mad_is_all_zero():
    """Test that a constant input scores 0 everywhere."""
    np.testing.assert_array_equal(modified_zscore(np.full(10, 3.0)), np.zeros(10))


def test_modified_zscore_excludes_missing():
    """Test that masked entries are left out of the statistics and scored 0."""
    scores = modified_zscore([1.0, 2.0, 3.0, 1e9], missing=[False, False, False, True])

    assert scores[3] == 0.0
    np.testing.assert_allclose(scores[:3], 0.6745 * np.array([-1.0, 0.0, 1.0]))


def test_modified_zscore_needs_three_values():
    """Test that fewer than three valid values raise InsufficientDataError."""
    with pytest.raises(InsufficientDataError):
        modified_zscore([1.0, np.nan, 2.0])


# ============================================================================
# Onset location
# ============================================================================


def test_locate_onset_noise_free_step(make_series):
    """Test that a clean voltage step is located exactly on every PMU."""
    contexts = [make_series(_step(10800, 4000), pmu_id=f"PMU{i}", t0_ms=T0) for i in range(3)]

    assert locate_onset(contexts) == grid_timestamp(T0, 4000, 60)


def test_locate_onset_majority_wins(make_series):
    """Test that the timestamp named by most PMUs wins over an outlying PMU."""
    contexts = [
        make_series(_step(10800, 5000), pmu_id="A", t0_ms=T0),
        make_series(_step(10800, 5000), pmu_id="B", t0_ms=T0),
        make_series(_step(10800, 1000), pmu_id="C", t0_ms=T0),
    ]

    assert locate_onset(contexts) == grid_timestamp(T0, 5000, 60)


def test_locate_onset_tie_goes_to_earliest(make_series):
    """Test that a tie between candidate timestamps resolves to the earliest."""
    contexts = [
        make_series(_step(10800, 6000), pmu_id="A", t0_ms=T0),
        make_series(_step(10800, 2000), pmu_id="B", t0_ms=T0),
    ]

    assert locate_onset(contexts) == grid_timestamp(T0, 2000, 60)


def test_locate_onset_channel_selection(make_series):
    """Test that the frequency channel alone locates the frequency change."""
    context = make_series(_step(10800, 5000), freq_dev=_step(10800, 3000, 0.0, -0.05), t0_ms=T0)

    assert locate_onset([context], channel="frequency") == grid_timestamp(T0, 3000, 60)
    assert locate_onset([context], channel="voltage") == grid_timestamp(T0, 5000, 60)


def test_locate_onset_ignores_missing_samples(make_series):
    """Test that a jump into a missing stretch is not taken as the onset."""
    voltage = _step(10800, 4000)
    voltage[100:110] = np.nan
    context = make_series(voltage, t0_ms=T0)

    assert locate_onset([context]) == grid_timestamp(T0, 4000, 60)


def test_locate_onset_errors(make_series):
    """Test that no contexts and flat signals raise the documented errors."""
    with pytest.raises(EmptyInputError):
        locate_onset([])
    with pytest.raises(NoOnsetError):
        locate_onset([make_series(np.ones(10800), t0_ms=T0)])


def _noisy_step_context(make_series, rng, index, pmu_id="PMU001", scale=1.0, offset=0.0):
    voltage = _step(10800, index) + rng.normal(0.0, 1e-4, 10800)
    freq = rng.normal(0.0, 1e-3, 10800)
    return make_series(scale * voltage + offset, freq_dev=scale * freq + offset, pmu_id=pmu_id, t0_ms=T0)


@pytest.mark.parametrize("scale, offset", [(1.0, 0.5), (1.0, -3.0), (2.5, 0.0), (0.01, 0.0), (40.0, -7.0)])
def test_locate_onset_invariant_to_offset_and_scale(make_series, scale, offset):
    """Test that shifting or positively rescaling a PMU's channels leaves the onset unchanged."""
    baseline = _noisy_step_context(make_series, np.random.default_rng(5), 4321)
    moved = _noisy_step_context(make_series, np.random.default_rng(5), 4321, scale=scale, offset=offset)

    assert locate_onset([moved]) == locate_onset([baseline]) == grid_timestamp(T0, 4321, 60)


def test_locate_onset_vote_invariant_to_per_pmu_offset_and_scale(make_series):
    """Test that the multi-PMU vote survives a different shift and rescale on every PMU."""
    onsets = [4000, 4000, 4000, 7000, 7000]
    transforms = [(1.0, 0.0), (3.0, 1.0), (0.2, -0.5), (10.0, 2.0), (0.5, 0.0)]

    baseline = [
        _noisy_step_context(make_series, np.random.default_rng(i), index, pmu_id=f"PMU{i}")
        for i, index in enumerate(onsets)
    ]
    moved = [
        _noisy_step_context(
            make_series, np.random.default_rng(i), index, pmu_id=f"PMU{i}", scale=scale, offset=offset
        )
        for i, (index, (scale, offset)) in enumerate(zip(onsets, transforms))
    ]

    assert locate_onset(moved) == locate_onset(baseline) == grid_timestamp(T0, 4000, 60)


# ============================================================================
# Window extraction
# ============================================================================


def test_extract_window_frame_containing_onset(make_series):
    """Test that the frame holding the onset is returned with 120 samples."""
    context = make_series(1.0 + np.arange(10800) * 1e-5, t0_ms=T0)
    onset = grid_timestamp(T0, 4530, 60)

    window = extract_window(context, onset, event_id=9, label=EventType.XFMR_OUTAGE)

    assert len(window) == WINDOW_SAMPLES
    assert window.frame_start_ms == grid_timestamp(T0, 4440, 60)
    assert window.onset_ms == onset
    assert window.event_id == 9 and window.label is EventType.XFMR_OUTAGE
    np.testing.assert_allclose(window.samples_v, 1.0 + np.arange(4440, 4560) * 1e-5)


def test_extract_window_frames_are_half_open(make_series):
    """Test that an onset on a frame boundary belongs to the frame it starts."""
    context = make_series(np.ones(10800), t0_ms=T0)

    window = extract_window(context, grid_timestamp(T0, 4440, 60))

    assert window.frame_start_ms == grid_timestamp(T0, 4440, 60)


def test_extract_window_keeps_thirty_fps_frame_native(make_series):
    """Test that a 30 frames/s frame is returned as its 60 raw samples."""
    context = make_series(np.arange(5400, dtype=float), sample_rate_hz=30, t0_ms=T0)

    window = extract_window(context, grid_timestamp(T0, 2265, 30))

    assert len(window) == 60
    assert window.frame_start_ms == grid_timestamp(T0, 2220, 30)
    np.testing.assert_array_equal(window.samples_v, np.arange(2220, 2280, dtype=float))


def test_quality_gate_resamples_thirty_fps(make_series):
    """Test that an accepted 60-sample frame is interpolated onto 120 half-step points."""
    context = make_series(np.arange(5400, dtype=float), sample_rate_hz=30, t0_ms=T0)

    result = quality_gate(extract_window(context, grid_timestamp(T0, 2265, 30)))

    assert isinstance(result, EventWindow)
    assert len(result.samples_v) == WINDOW_SAMPLES
    assert result.samples_v[0] == 2220.0
    assert result.samples_v[1] == pytest.approx(2220.5)
    assert result.samples_v[2] == 2221.0


def test_extract_window_outside_context(make_series):
    """Test that an onset outside the context raises OutOfRangeError."""
    context = make_series(np.ones(10800), t0_ms=T0)

    with pytest.raises(OutOfRangeError):
        extract_window(context, T0 - 10_000)


def test_sample_normal_window_avoids_onset_frame(make_series, rng):
    """Test that normal windows never come from the excluded onset frame."""
    context = make_series(np.ones(10800), t0_ms=T0)
    onset = grid_timestamp(T0, 4530, 60)
    excluded_start = grid_timestamp(T0, 4440, 60)

    for _ in range(200):
        window = sample_normal_window(context, rng, exclude_onset_ms=onset)
        assert window.label is EventType.NORMAL
        assert window.frame_start_ms != excluded_start
        assert len(window) == WINDOW_SAMPLES


def test_sample_normal_window_without_free_frame(make_series, rng):
    """Test that a single-frame context with its frame excluded has no normal window."""
    context = make_series(np.ones(120), t0_ms=T0)

    with pytest.raises(OutOfRangeError):
        sample_normal_window(context, rng, exclude_onset_ms=T0)


# ============================================================================
# Quality gate
# ============================================================================


def test_quality_gate_accepts_clean_window():
    """Test that a clean window passes with quality 0 and unchanged samples."""
    ramp = 1.0 + np.arange(120) * 1e-4

    result = quality_gate(_candidate(ramp))

    assert isinstance(result, EventWindow)
    assert result.quality == 0.0
    np.testing.assert_array_equal(result.samples_v, ramp)


def test_quality_gate_boundary_at_five_percent():
    """Test that 6 bad samples of 120 are accepted and 7 are rejected."""
    ramp = 1.0 + np.arange(120) * 1e-4
    six = ramp.copy()
    six[40:46] = np.nan
    seven = ramp.copy()
    seven[40:47] = np.nan

    accepted = quality_gate(_candidate(six))
    rejected = quality_gate(_candidate(seven))

    assert isinstance(accepted, EventWindow)
    assert accepted.quality == pytest.approx(0.05)
    np.testing.assert_allclose(accepted.samples_v, ramp)
    assert isinstance(rejected, Rejection)
    assert rejected.bad_fraction == pytest.approx(7 / 120)


def test_quality_gate_flags_status_and_spikes():
    """Test that unusable status words and spikes are interpolated over."""
    voltage = np.ones(120)
    voltage[30] = 10.0
    status = np.zeros(120, dtype=np.uint16)
    status[80] = 4

    result = quality_gate(_candidate(voltage, status=status))

    assert isinstance(result, EventWindow)
    assert result.quality == pytest.approx(2 / 120)
    assert result.samples_v[30] == pytest.approx(1.0)


def test_quality_gate_interpolates_edges_with_nearest_value():
    """Test that a bad leading sample takes the first good value."""
    voltage = 1.0 + np.arange(120) * 1e-4
    voltage[0] = np.nan

    result = quality_gate(_candidate(voltage))

    assert result.samples_v[0] == pytest.approx(1.0001)


def _thirty_fps_frame(make_series, missing):
    voltage = 1.0 + np.arange(5400) * 1e-4
    voltage[missing] = np.nan
    context = make_series(voltage, sample_rate_hz=30, t0_ms=T0)
    return extract_window(context, T0)


def test_quality_gate_counts_thirty_fps_gaps_on_raw_samples(make_series):
    """Test that 3 missing samples of a 60-sample frame are accepted at exactly 5%."""
    result = quality_gate(_thirty_fps_frame(make_series, [10, 30, 50]))

    assert isinstance(result, EventWindow)
    assert result.quality == pytest.approx(0.05)
    assert len(result.samples_v) == WINDOW_SAMPLES
    assert np.isfinite(result.samples_v).all()
    np.testing.assert_allclose(result.samples_v, 1.0 + np.minimum(np.arange(120) * 0.5, 59) * 1e-4)


def test_quality_gate_rejects_thirty_fps_frame_over_five_percent(make_series):
    """Test that 4 missing samples of a 60-sample frame are rejected."""
    result = quality_gate(_thirty_fps_frame(make_series, [10, 20, 30, 50]))

    assert isinstance(result, Rejection)
    assert result.bad_fraction == pytest.approx(4 / 60)
    assert result.reason.startswith("4/60")


# ============================================================================
# Survival function
# ============================================================================


def _cell(gaps, count=10):
    return QualityCell(
        pmu_id="PMU001", day=0, sample_count=count, missing_fraction=sum(gaps) / count, gap_lengths=gaps
    )


def test_survival_of_missing_fraction():
    """Test that S(k) counts PMU-days whose missing fraction exceeds k."""
    stats = QualityStats(cells=[_cell([]), _cell([1]), _cell([2]), _cell([5])])

    curve = survival_function(stats, [0.0, 0.1, 0.5])

    assert curve.survival == pytest.approx([0.75, 0.5, 0.0])


def test_survival_of_gap_length():
    """Test that S(k) over gap lengths pools runs from every cell."""
    stats = QualityStats(cells=[_cell([1, 3]), _cell([5])])

    curve = survival_function(stats, [0, 2, 5], measure="gap_length")

    assert curve.survival == pytest.approx([1.0, 2 / 3, 0.0])


def test_survival_without_gaps_is_zero():
    """Test that a dataset with no gaps has S = 0 everywhere."""
    curve = survival_function(QualityStats(cells=[_cell([])]), [1, 2], measure="gap_length")

    assert curve.survival == [0.0, 0.0]


def test_survival_errors():
    """Test that empty stats, unsorted ks and unknown measures are rejected."""
    with pytest.raises(EmptyInputError):
        survival_function(QualityStats(), [0.0])
    with pytest.raises(InvalidParameterError):
        survival_function(QualityStats(cells=[_cell([1])]), [0.5, 0.1])
    with pytest.raises(InvalidParameterError):
        survival_function(QualityStats(cells=[_cell([1])]), [0.1], measure="median")
