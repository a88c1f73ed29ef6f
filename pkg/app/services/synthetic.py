"""Synthetic - labeled multi-PMU event signals with injectable data-quality defects."""

from typing import Any, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.core.config import Settings
from app.core.logging_config import get_logger, timed
from app.models.schemas import (
    CLASS_LABELS,
    DefectSpec,
    EventLogEntry,
    EventType,
    EventWindow,
    PmuSeries,
    Rejection,
    ScenarioSpec,
    SyntheticDataset,
    SyntheticEvent,
)
from app.services.mtf_encoder import encode_window
from app.services.pmu_data import CONTEXT_S, PRE_EVENT_S, slice_context
from app.services.preprocess import extract_window, locate_onset, quality_gate, sample_normal_window
from app.utils.error_handler import DefectPlacementError, InvalidParameterError
from app.utils.parallel_executor import ParallelExecutor
from app.utils.time_utils import MS_PER_SECOND, grid_timestamp, truncate_to_minute

logger = get_logger(__name__)

NOMINAL_VOLTAGE_PU = 1.0
NOMINAL_FREQUENCY_HZ = 60.0
INTERCONNECTION = "B"

# Series cover [base - 120 s, base + 180 s) so the context cut around any
# minute-truncated log start stays inside the recording.
LEAD_S = 2 * PRE_EVENT_S
SERIES_S = LEAD_S + CONTEXT_S

LINE_RECOVERY_SHARE = 0.4
LINE_FREQ_BLIP_HZ = 0.01
XFMR_RINGING_SHARE = 0.5
XFMR_RINGING_TAU_S = 0.4
XFMR_FREQ_SHIFT_HZ = -0.005


# ============================================================================
# Event generation
# ============================================================================


def _template(spec: ScenarioSpec, t: np.ndarray, factor: float) -> tuple[np.ndarray, np.ndarray]:
    """Voltage (pu, relative to nominal) and frequency (Hz) deviations for one PMU."""
    after = t >= 0
    tt = np.where(after, t, 0.0)
    dv = np.zeros_like(t)
    df = np.zeros_like(t)

    if spec.event_type == EventType.LINE_OUTAGE:
        depth = spec.step_depth * factor
        decay = np.exp(-tt / spec.recovery_tau_s)
        dv = -depth * (LINE_RECOVERY_SHARE + (1.0 - LINE_RECOVERY_SHARE) * decay)
        df = LINE_FREQ_BLIP_HZ * factor * decay
    elif spec.event_type == EventType.XFMR_OUTAGE:
        depth = spec.step_depth * factor
        ringing = np.exp(-tt / XFMR_RINGING_TAU_S) * np.sin(2 * np.pi * spec.ringing_hz * tt)
        dv = -depth * (1.0 + XFMR_RINGING_SHARE * ringing)
        df = XFMR_FREQ_SHIFT_HZ * factor * np.ones_like(t)
    elif spec.event_type == EventType.FREQUENCY_EVENT:
        # Coherent across the interconnection: no per-PMU scaling
        df = -spec.freq_dip_hz * (1.0 - np.exp(-tt / spec.dip_tau_s))
    elif spec.event_type == EventType.OSCILLATION_EVENT:
        envelope = spec.oscillation_amplitude * factor * np.exp(-spec.oscillation_damping * tt)
        wave = envelope * np.cos(2 * np.pi * spec.oscillation_hz * tt)
        dv = wave
        df = wave
    return np.where(after, dv, 0.0), np.where(after, df, 0.0)


def generate_event(spec: ScenarioSpec) -> tuple[list[PmuSeries], EventLogEntry]:
    """
    Render one event on every PMU of a synthetic fleet.

    All PMUs share the onset. Outage and oscillation amplitudes are scaled by
    a per-PMU electrical-distance factor in (0.2, 1]; frequency events are
    identical everywhere. The log entry's start is the onset truncated to the
    minute, as operator logs are.

    Args:
        spec: Scenario parameters

    Returns:
        (one series per PMU, ground-truth log entry)
    """
    rng = np.random.default_rng(spec.seed)
    rate = spec.sample_rate_hz
    count = SERIES_S * rate
    t0 = spec.base_time_ms - LEAD_S * MS_PER_SECOND
    onset = (LEAD_S - PRE_EVENT_S) * rate + spec.onset_index
    t = (np.arange(count) - onset) / rate
    freq_sigma = spec.noise_sigma if spec.freq_noise_hz is None else spec.freq_noise_hz

    series = []
    for p in range(spec.pmu_count):
        factor = 1.0 - 0.8 * rng.random()
        dv, df = _template(spec, t, factor)
        voltage = NOMINAL_VOLTAGE_PU * (1.0 + dv) + rng.normal(0.0, spec.noise_sigma, count)
        freq_dev = df + rng.normal(0.0, freq_sigma, count)
        series.append(
            PmuSeries(
                pmu_id=f"PMU{p + 1:03d}",
                sample_rate_hz=rate,
                t0_ms=t0,
                voltage=voltage,
                freq_dev=freq_dev,
                status=np.zeros(count, dtype=np.uint16),
                voltage_missing=np.zeros(count, dtype=bool),
                freq_missing=np.zeros(count, dtype=bool),
            )
        )

    onset_ms = grid_timestamp(t0, onset, rate)
    start = truncate_to_minute(onset_ms)
    entry = EventLogEntry(
        interconnection=INTERCONNECTION,
        start_ms=start,
        end_ms=start + 60 * MS_PER_SECOND,
        event_type=spec.event_type,
        cause=f"synthetic event {spec.event_id}",
    )
    return series, entry


def true_onset_ms(spec: ScenarioSpec) -> int:
    t0 = spec.base_time_ms - LEAD_S * MS_PER_SECOND
    return grid_timestamp(t0, (LEAD_S - PRE_EVENT_S) * spec.sample_rate_hz + spec.onset_index, spec.sample_rate_hz)


def random_scenario(
    event_type: EventType,
    rng: np.random.Generator,
    event_id: int = 0,
    pmu_count: int = 43,
    noise_sigma: float = 0.0005,
    sample_rate_hz: int = 60,
) -> ScenarioSpec:
    """Draw event magnitudes from the class's parameter ranges; onset falls in the logged minute."""
    return ScenarioSpec(
        event_type=event_type,
        event_id=event_id,
        pmu_count=pmu_count,
        sample_rate_hz=sample_rate_hz,
        noise_sigma=noise_sigma,
        step_depth=float(rng.uniform(0.02, 0.10)),
        ringing_hz=float(rng.uniform(3.0, 5.0)),
        oscillation_hz=float(rng.uniform(0.2, 2.0)),
        oscillation_damping=float(rng.uniform(0.1, 0.5)),
        oscillation_amplitude=float(rng.uniform(0.005, 0.03)),
        freq_dip_hz=float(rng.uniform(0.02, 0.1)),
        onset_index=int(rng.integers(PRE_EVENT_S * sample_rate_hz, 2 * PRE_EVENT_S * sample_rate_hz)),
        seed=int(rng.integers(0, 2**31 - 1)),
    )


# ============================================================================
# Defect injection
# ============================================================================


def place_missing_runs(count: int, spec: DefectSpec, rng: np.random.Generator) -> np.ndarray:
    """
    Missing mask with separated runs totalling round(fraction * count) samples.

    Every run keeps at least one present sample between itself and its
    neighbours, so each placed run stays a distinct gap.
    """
    missing = np.zeros(count, dtype=bool)
    remaining = int(round(spec.missing_fraction * count))
    while remaining > 0:
        jitter = int(rng.integers(-spec.run_length_jitter, spec.run_length_jitter + 1)) if spec.run_length_jitter else 0
        length = min(max(1, spec.run_length + jitter), remaining)
        if length > count:
            raise DefectPlacementError(f"run of {length} samples does not fit a {count}-sample series")
        free = ~sliding_window_view(np.pad(missing, 1), length + 2).any(axis=1)
        starts = np.flatnonzero(free)
        if len(starts) == 0:
            raise DefectPlacementError(
                f"cannot place {remaining} more missing samples without touching existing runs"
            )
        start = int(rng.choice(starts))
        missing[start : start + length] = True
        remaining -= length
    return missing


def inject_defects(series: PmuSeries, spec: DefectSpec, rng: np.random.Generator) -> PmuSeries:
    """
    Add missing runs, bad-data spikes and corrupted status words.

    Missing runs blank both channels. Spikes set voltage to nominal x factor
    and frequency deviation to 60 Hz x (factor - 1) at random present samples.
    Each sample's status word is corrupted with the given probability.

    Raises:
        DefectPlacementError: Target fraction or spikes cannot be placed
    """
    if spec.missing_fraction == 0 and spec.spike_count == 0 and spec.status_corruption_prob == 0:
        return series

    count = len(series)
    missing = place_missing_runs(count, spec, rng)
    voltage = np.where(missing, np.nan, series.voltage)
    freq_dev = np.where(missing, np.nan, series.freq_dev)
    voltage_missing = series.voltage_missing | missing
    freq_missing = series.freq_missing | missing

    if spec.spike_count:
        present = np.flatnonzero(~(voltage_missing | freq_missing))
        if spec.spike_count > len(present):
            raise DefectPlacementError(f"{spec.spike_count} spikes requested, {len(present)} samples present")
        spikes = rng.choice(present, size=spec.spike_count, replace=False)
        nominal = float(np.median(series.voltage[~series.voltage_missing])) if (~series.voltage_missing).any() else 1.0
        voltage[spikes] = nominal * spec.spike_factor
        freq_dev[spikes] = NOMINAL_FREQUENCY_HZ * (spec.spike_factor - 1.0)

    status = series.status.copy()
    if spec.status_corruption_prob:
        corrupt = rng.random(count) < spec.status_corruption_prob
        status[corrupt] = rng.integers(1, 0x10000, size=int(corrupt.sum()), dtype=np.uint16)

    return PmuSeries(
        pmu_id=series.pmu_id,
        sample_rate_hz=series.sample_rate_hz,
        t0_ms=series.t0_ms,
        voltage=voltage,
        freq_dev=freq_dev,
        status=status,
        voltage_missing=voltage_missing,
        freq_missing=freq_missing,
        voltage_unit=series.voltage_unit,
    )


# ============================================================================
# Dataset assembly
# ============================================================================


def process_event(
    series: list[PmuSeries],
    entry: EventLogEntry,
    event_id: int,
    rng: np.random.Generator,
) -> tuple[list[EventWindow], list[Rejection], Optional[int]]:
    """
    Run the preprocessing chain on one event's PMU recordings.

    Event classes are windowed around the located onset. Normal-class events
    use one random frame shared by all PMUs.

    Returns:
        (accepted windows, rejections, located onset or None)
    """
    contexts = [slice_context(s, entry.start_ms) for s in series]
    if entry.event_type == EventType.NORMAL:
        anchor = sample_normal_window(contexts[0], rng, event_id).onset_ms
        onset = None
    else:
        anchor = onset = locate_onset(contexts)

    windows: list[EventWindow] = []
    rejections: list[Rejection] = []
    for context in contexts:
        gated = quality_gate(extract_window(context, anchor, event_id, entry.event_type))
        if isinstance(gated, Rejection):
            rejections.append(gated)
        else:
            windows.append(gated)
    return windows, rejections, onset


class DatasetBuilder:
    """Builds balanced synthetic datasets through the full preprocessing chain."""

    def __init__(self, settings: Settings, logger: Any):
        """
        Initialize dataset builder.

        Args:
            settings: Application settings
            logger: Logger instance
        """
        self.settings = settings
        self.logger = logger
        self.executor = ParallelExecutor(settings, logger)

    def build_dataset(
        self,
        per_class: int,
        seed: Optional[int] = None,
        pmu_count: Optional[int] = None,
        noise_sigma: Optional[float] = None,
        defects: Optional[DefectSpec] = None,
        q: Optional[int] = None,
        keep_signals: bool = False,
    ) -> SyntheticDataset:
        """
        Generate, preprocess and encode `per_class` events of every class.

        Event ids run from 1 in class order. Each event draws from its own
        child seed, so results do not depend on scheduling.

        Args:
            per_class: Events per class (>= 1)
            seed: Root seed (settings.seed by default)
            pmu_count: PMUs per event (settings.pmu_count by default)
            noise_sigma: Noise level (settings.noise_sigma by default)
            defects: Optional defects injected into every PMU series
            q: Quantile bins for encoding (settings.q by default)
            keep_signals: Keep the raw PMU series on each event

        Returns:
            SyntheticDataset in event-id order
        """
        if per_class < 1:
            raise InvalidParameterError(f"per_class must be at least 1, got {per_class}")
        seed = self.settings.seed if seed is None else seed
        pmu_count = pmu_count or self.settings.pmu_count
        noise_sigma = self.settings.noise_sigma if noise_sigma is None else noise_sigma
        q = q or self.settings.q

        labels = [label for label in CLASS_LABELS for _ in range(per_class)]
        children = np.random.SeedSequence(seed).spawn(len(labels))

        def make_task(event_id: int, label: EventType, child: np.random.SeedSequence) -> Any:
            return lambda: self._build_event(event_id, label, child, pmu_count, noise_sigma, defects, q, keep_signals)

        tasks = [make_task(i + 1, label, children[i]) for i, label in enumerate(labels)]
        names = [f"event_{i + 1}_{label.value}" for i, label in enumerate(labels)]

        with timed(self.logger, f"Synthetic dataset ({len(tasks)} events x {pmu_count} PMUs)"):
            events = ParallelExecutor.raise_first(self.executor.execute_batch(tasks, names))

        dataset = SyntheticDataset(events=events)
        rejected = len(dataset.rejections)
        self.logger.info(f"Built {len(dataset.windows)} windows from {len(events)} events ({rejected} rejected)")
        return dataset

    def _build_event(
        self,
        event_id: int,
        label: EventType,
        child: np.random.SeedSequence,
        pmu_count: int,
        noise_sigma: float,
        defects: Optional[DefectSpec],
        q: int,
        keep_signals: bool,
    ) -> SyntheticEvent:
        rng = np.random.default_rng(child)
        spec = random_scenario(
            label,
            rng,
            event_id=event_id,
            pmu_count=pmu_count,
            noise_sigma=noise_sigma,
            sample_rate_hz=self.settings.sample_rate_hz,
        )
        series, entry = generate_event(spec)
        if defects is not None:
            series = [inject_defects(s, defects, rng) for s in series]

        windows, rejections, onset = process_event(series, entry, event_id, rng)
        for rejection in rejections:
            self.logger.warning(f"Event {event_id}: rejected {rejection.pmu_id} ({rejection.reason})")

        return SyntheticEvent(
            log_entry=entry,
            series=series if keep_signals else [],
            windows=windows,
            graphs=[encode_window(window, q) for window in windows],
            rejections=rejections,
            onset_ms=onset,
            true_onset_ms=true_onset_ms(spec),
        )
