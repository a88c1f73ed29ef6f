"""Pydantic models and schemas for the event identification pipeline."""

from enum import Enum
from typing import Any, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# ============================================================================
# Enums
# ============================================================================


class EventType(str, Enum):
    """Event categories found in operator event logs."""

    LINE_OUTAGE = "LineOutage"
    XFMR_OUTAGE = "XfmrOutage"
    FREQUENCY_EVENT = "FrequencyEvent"
    OSCILLATION_EVENT = "OscillationEvent"
    NORMAL = "Normal"
    UNKNOWN = "Unknown"


# Class index <-> event type for the 5-way classifier (Unknown is never a target).
CLASS_LABELS: tuple[EventType, ...] = (
    EventType.LINE_OUTAGE,
    EventType.XFMR_OUTAGE,
    EventType.FREQUENCY_EVENT,
    EventType.OSCILLATION_EVENT,
    EventType.NORMAL,
)


class Channel(str, Enum):
    """Signal channel used for onset location."""

    VOLTAGE = "voltage"
    FREQUENCY = "frequency"
    BOTH = "both"


def _frozen_array(value: Any, dtype: Any) -> np.ndarray:
    array = np.array(value, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


class ArrayModel(BaseModel):
    """Immutable model holding numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ============================================================================
# PMU Data Models
# ============================================================================


class PmuSeries(ArrayModel):
    """Timestamped samples from one PMU on a uniform grid."""

    pmu_id: str = Field(..., description="PMU identifier")
    sample_rate_hz: int = Field(..., description="Frames per second (30 or 60)")
    t0_ms: int = Field(..., description="Epoch-ms timestamp of sample 0 (UTC)")
    voltage: np.ndarray = Field(..., description="Voltage magnitude samples")
    freq_dev: np.ndarray = Field(..., description="Frequency deviation from 60 Hz, in Hz")
    status: np.ndarray = Field(..., description="16-bit status word per sample")
    voltage_missing: np.ndarray = Field(..., description="True where the voltage sample is missing")
    freq_missing: np.ndarray = Field(..., description="True where the frequency sample is missing")
    voltage_unit: str = Field(default="pu", description="Voltage unit (pu or kV)")

    @field_validator("voltage", "freq_dev", mode="before")
    @classmethod
    def _as_float(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, np.float64)

    @field_validator("status", mode="before")
    @classmethod
    def _as_status(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, np.uint16)

    @field_validator("voltage_missing", "freq_missing", mode="before")
    @classmethod
    def _as_mask(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, bool)

    @model_validator(mode="after")
    def _check_lengths(self) -> "PmuSeries":
        if self.sample_rate_hz not in (30, 60):
            raise ValueError(f"sample_rate_hz must be 30 or 60, got {self.sample_rate_hz}")
        lengths = {
            len(self.voltage),
            len(self.freq_dev),
            len(self.status),
            len(self.voltage_missing),
            len(self.freq_missing),
        }
        if len(lengths) != 1:
            raise ValueError(f"PmuSeries {self.pmu_id}: channel lengths differ {sorted(lengths)}")
        return self

    @property
    def missing(self) -> np.ndarray:
        """True where either channel is missing."""
        return self.voltage_missing | self.freq_missing

    def __len__(self) -> int:
        return len(self.voltage)

    @property
    def duration_ms(self) -> int:
        return round(len(self) * 1000 / self.sample_rate_hz)


class EventLogEntry(BaseModel):
    """One row of an operator event log."""

    model_config = ConfigDict(frozen=True)

    interconnection: str = Field(..., description="Interconnection label (e.g. 'B')")
    start_ms: int = Field(..., description="Start timestamp, epoch ms (minute resolution permitted)")
    end_ms: int = Field(..., description="End timestamp, epoch ms")
    event_type: EventType = Field(..., description="Normalized event type")
    cause: str = Field(default="", description="Free-text cause")

    @model_validator(mode="after")
    def _check_order(self) -> "EventLogEntry":
        if self.start_ms > self.end_ms:
            raise ValueError("event start must not be after its end")
        return self


class StatusAssessment(BaseModel):
    """Decoded IEEE C37.118 status word."""

    model_config = ConfigDict(frozen=True)

    usable: bool = Field(..., description="True iff the raw word is 0")
    trigger_reason: int = Field(..., ge=0, le=15, description="Bits 3..0")
    time_error: int = Field(..., ge=0, le=3, description="Bits 5..4")
    raw: int = Field(..., ge=0, le=0xFFFF, description="Raw 16-bit word")


# ============================================================================
# Preprocessing Models
# ============================================================================


class CandidateWindow(ArrayModel):
    """A 2-second frame before cleaning; may hold missing or bad samples."""

    event_id: int = Field(..., description="Event identifier")
    pmu_id: str = Field(..., description="PMU identifier")
    label: EventType = Field(..., description="Event type from the log")
    onset_ms: int = Field(..., description="Located onset timestamp")
    frame_start_ms: int = Field(..., description="Timestamp of the first frame sample")
    samples_v: np.ndarray = Field(..., description="Voltage samples (NaN where missing)")
    samples_f: np.ndarray = Field(..., description="Frequency-deviation samples (NaN where missing)")
    missing_v: np.ndarray = Field(..., description="Voltage missing mask")
    missing_f: np.ndarray = Field(..., description="Frequency missing mask")
    status: np.ndarray = Field(..., description="Status words")

    @field_validator("samples_v", "samples_f", mode="before")
    @classmethod
    def _as_float(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, np.float64)

    @field_validator("missing_v", "missing_f", mode="before")
    @classmethod
    def _as_mask(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, bool)

    @field_validator("status", mode="before")
    @classmethod
    def _as_status(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, np.uint16)

    def __len__(self) -> int:
        return len(self.samples_v)


class EventWindow(ArrayModel):
    """A cleaned 2-second, 2-channel segment; the unit of classification."""

    event_id: int = Field(..., description="Event identifier")
    pmu_id: str = Field(..., description="PMU identifier")
    label: EventType = Field(..., description="Event type")
    samples_v: np.ndarray = Field(..., description="Voltage magnitude samples")
    samples_f: np.ndarray = Field(..., description="Frequency deviation samples (Hz)")
    onset_ms: int = Field(..., description="Onset timestamp, epoch ms")
    quality: float = Field(..., ge=0.0, le=0.05, description="Fraction of interpolated samples")

    @field_validator("samples_v", "samples_f", mode="before")
    @classmethod
    def _as_float(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, np.float64)

    @model_validator(mode="after")
    def _check_samples(self) -> "EventWindow":
        if len(self.samples_v) != len(self.samples_f):
            raise ValueError("voltage and frequency windows differ in length")
        if not (np.all(np.isfinite(self.samples_v)) and np.all(np.isfinite(self.samples_f))):
            raise ValueError("EventWindow samples must be finite")
        return self

    def __len__(self) -> int:
        return len(self.samples_v)


class Rejection(BaseModel):
    """Quality-gate rejection of a candidate window."""

    model_config = ConfigDict(frozen=True)

    event_id: int
    pmu_id: str
    bad_fraction: float
    reason: str


class QualityCell(BaseModel):
    """Data-quality summary for one PMU on one UTC day."""

    model_config = ConfigDict(frozen=True)

    pmu_id: str
    day: int = Field(..., description="UTC day number since the epoch")
    sample_count: int = Field(..., ge=1)
    missing_fraction: float = Field(..., ge=0.0, le=1.0)
    gap_lengths: list[int] = Field(default_factory=list, description="Consecutive-bad run lengths")

    @model_validator(mode="after")
    def _check_consistency(self) -> "QualityCell":
        expected = sum(self.gap_lengths) / self.sample_count
        if abs(expected - self.missing_fraction) > 1e-12:
            raise ValueError("missing_fraction disagrees with gap lengths")
        return self


class QualityStats(BaseModel):
    """Per (pmu, day) missing-data statistics."""

    cells: list[QualityCell] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.cells)


class SurvivalCurve(BaseModel):
    """Empirical survival function S(k) = Pr{statistic > k}."""

    measure: str = Field(..., description="'missing_fraction' or 'gap_length'")
    ks: list[float]
    survival: list[float]


# ============================================================================
# MTF Models
# ============================================================================


class TransitionMatrix(ArrayModel):
    """First-order Markov transition matrix between quantile bins."""

    matrix: np.ndarray = Field(..., description="q x q, row = source bin, column = destination bin")
    source_counts: np.ndarray = Field(..., description="Outgoing transitions per source bin")

    @property
    def q(self) -> int:
        return self.matrix.shape[0]


class MtfGraph(ArrayModel):
    """n x n x 2 Markov transition field of one window (voltage, frequency)."""

    event_id: int = Field(..., description="Event identifier")
    pmu_id: str = Field(..., description="PMU identifier")
    label: EventType = Field(default=EventType.UNKNOWN, description="Event type if known")
    q: int = Field(..., ge=2, description="Quantile bins used")
    data: np.ndarray = Field(..., description="float32 array shaped (n, n, 2)")

    @field_validator("data", mode="before")
    @classmethod
    def _as_data(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, np.float32)

    @model_validator(mode="after")
    def _check_data(self) -> "MtfGraph":
        if self.data.ndim != 3 or self.data.shape[0] != self.data.shape[1] or self.data.shape[2] != 2:
            raise ValueError(f"MtfGraph data must be (n, n, 2), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("MtfGraph data must be finite")
        return self

    @property
    def n(self) -> int:
        return self.data.shape[0]


# ============================================================================
# Classifier Models
# ============================================================================


class ModelConfig(BaseModel):
    """Layer layout of the SPP-aided CNN (defaults reproduce the reference table)."""

    model_config = ConfigDict(frozen=True)

    input_channels: int = Field(default=2, ge=1)
    input_size: int = Field(default=120, ge=1, description="Canonical training graph size")
    conv_filters: tuple[int, ...] = Field(default=(32, 32, 64, 64, 128, 128))
    kernel_size: int = Field(default=3, ge=1)
    padding: str = Field(default="same", description="'same' or 'valid'")
    pool_after: tuple[int, ...] = Field(default=(2, 4, 6), description="1-based conv blocks followed by 2x2 max-pool")
    dropout_after: tuple[int, ...] = Field(default=(4, 6), description="1-based conv blocks followed by dropout")
    dropout_rate: float = Field(default=0.25)
    spp_levels: tuple[int, ...] = Field(default=(1, 2, 4))
    num_classes: int = Field(default=5)
    head: str = Field(default="spp", description="'spp' or 'flatten' (fixed-size ablation)")
    output_init_scale: float = Field(default=0.01, gt=0.0)
    bn_momentum: float = Field(default=0.9)
    bn_eps: float = Field(default=1e-5)


class TrainingConfig(BaseModel):
    """Optimizer and schedule for `train`."""

    epochs: int = Field(default=30, ge=1)
    batch_size: int = Field(default=32, ge=2)
    lr: float = Field(default=1e-3, gt=0.0)
    beta1: float = Field(default=0.9)
    beta2: float = Field(default=0.999)
    eps: float = Field(default=1e-8)
    seed: int = Field(default=7)
    test_fraction: float = Field(default=0.2, gt=0.0, lt=1.0)


class EpochRecord(BaseModel):
    """One epoch of training history."""

    epoch: int
    train_loss: float
    train_acc: float
    test_loss: Optional[float] = None
    test_acc: Optional[float] = None


class TrainingHistory(BaseModel):
    """Per-epoch training curves."""

    epochs: list[EpochRecord] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)


class Prediction(BaseModel):
    """Class distribution for one graph."""

    probabilities: list[float]
    label_index: int
    label: EventType
    latency_ms: float


# ============================================================================
# Synthetic Data Models
# ============================================================================


class ScenarioSpec(BaseModel):
    """Parameters of one synthetic multi-PMU event."""

    event_type: EventType
    event_id: int = Field(default=0)
    pmu_count: int = Field(default=43, ge=1)
    sample_rate_hz: int = Field(default=60)
    noise_sigma: float = Field(default=0.0005, ge=0.0, description="Voltage noise sigma, per-unit")
    freq_noise_hz: Optional[float] = Field(
        default=None, ge=0.0, description="Frequency noise sigma in Hz (defaults to noise_sigma)"
    )
    step_depth: float = Field(default=0.05, description="Outage voltage step depth, fraction of nominal")
    recovery_tau_s: float = Field(default=0.5, gt=0.0, description="Line-outage voltage recovery time constant")
    ringing_hz: float = Field(default=4.0, gt=0.0, description="Transformer-outage ringing frequency")
    oscillation_hz: float = Field(default=0.8, description="Oscillation frequency (0.2-2 Hz band)")
    oscillation_damping: float = Field(default=0.3, ge=0.0, description="Oscillation decay rate, 1/s")
    oscillation_amplitude: float = Field(default=0.02, description="Oscillation voltage amplitude, per-unit")
    freq_dip_hz: float = Field(default=0.05, description="Frequency-event dip depth in Hz")
    dip_tau_s: float = Field(default=0.1, gt=0.0, description="Frequency-dip time constant")
    onset_index: int = Field(default=4500, description="Onset sample index within the 180 s context")
    base_time_ms: int = Field(default=1_462_096_800_000, description="Minute-aligned log reference time")
    seed: int = Field(default=0)

    @model_validator(mode="after")
    def _check_spec(self) -> "ScenarioSpec":
        if self.sample_rate_hz not in (30, 60):
            raise ValueError("sample_rate_hz must be 30 or 60")
        if not 0 <= self.onset_index < 180 * self.sample_rate_hz:
            raise ValueError("onset_index must lie within the 180 s context")
        if not 0.2 <= self.oscillation_hz <= 2.0:
            raise ValueError("oscillation_hz must lie in the 0.2-2 Hz band")
        if self.base_time_ms % 60_000:
            raise ValueError("base_time_ms must be minute aligned")
        return self


class DefectSpec(BaseModel):
    """Data-quality defects to inject into a PmuSeries."""

    missing_fraction: float = Field(default=0.0, ge=0.0, lt=1.0)
    run_length: int = Field(default=12, ge=1, description="Mean consecutive-missing run length")
    run_length_jitter: int = Field(default=0, ge=0, description="Uniform +/- jitter on run length")
    spike_count: int = Field(default=0, ge=0, description="Number of bad-data spikes")
    spike_factor: float = Field(default=10.0, description="Spike value = nominal x factor")
    status_corruption_prob: float = Field(default=0.0, ge=0.0, le=1.0)


class SyntheticEvent(BaseModel):
    """Everything produced for one synthetic event, raw signals included."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    log_entry: EventLogEntry
    series: list[PmuSeries] = Field(default_factory=list)
    windows: list[EventWindow] = Field(default_factory=list)
    graphs: list[MtfGraph] = Field(default_factory=list)
    rejections: list[Rejection] = Field(default_factory=list)
    onset_ms: Optional[int] = Field(default=None, description="Located onset (None for normal-class events)")
    true_onset_ms: int = Field(..., description="Injected onset timestamp")


class SyntheticDataset(BaseModel):
    """Balanced labeled dataset assembled from synthetic events."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    events: list[SyntheticEvent] = Field(default_factory=list)

    @property
    def windows(self) -> list[EventWindow]:
        return [window for event in self.events for window in event.windows]

    @property
    def graphs(self) -> list[MtfGraph]:
        return [graph for event in self.events for graph in event.graphs]

    @property
    def rejections(self) -> list[Rejection]:
        return [rejection for event in self.events for rejection in event.rejections]

    @property
    def log_entries(self) -> list[EventLogEntry]:
        return [event.log_entry for event in self.events]


# ============================================================================
# Evaluation Models
# ============================================================================


class ConfusionMatrix(ArrayModel):
    """o x o counts; rows = predicted class, columns = true class."""

    counts: np.ndarray = Field(..., description="int64 counts[predicted, true]")
    labels: tuple[EventType, ...] = Field(default=CLASS_LABELS)

    @field_validator("counts", mode="before")
    @classmethod
    def _as_counts(cls, value: Any) -> np.ndarray:
        return _frozen_array(value, np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts) / self.total) if self.total else 0.0

    @property
    def precision(self) -> np.ndarray:
        rows = self.counts.sum(axis=1)
        return np.divide(np.diag(self.counts), rows, out=np.zeros(len(rows)), where=rows > 0)

    @property
    def recall(self) -> np.ndarray:
        cols = self.counts.sum(axis=0)
        return np.divide(np.diag(self.counts), cols, out=np.zeros(len(cols)), where=cols > 0)


class SystemVote(BaseModel):
    """System-level verdict from per-PMU predictions."""

    label_index: Optional[int] = Field(default=None, description="Identified class, None if unidentified")
    share: float = Field(..., ge=0.0, le=1.0, description="Share of PMUs agreeing with the modal class")

    @property
    def identified(self) -> bool:
        return self.label_index is not None


class SensitivityPoint(BaseModel):
    missing_fraction: float
    mean_accuracy: float
    std_accuracy: float = Field(..., ge=0.0)
    trials: int


class SensitivityCurve(BaseModel):
    """Accuracy versus share of removed samples."""

    points: list[SensitivityPoint] = Field(default_factory=list)
    mode: str = Field(default="delete", description="'delete' (shrink n) or 'linear' (impute)")
