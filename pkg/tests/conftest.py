"""Shared pytest fixtures and configuration."""

import numpy as np
import pytest

from app.core.config import Settings
from app.core.logging_config import get_logger
from app.models.schemas import CLASS_LABELS, EventType, EventWindow, ModelConfig, MtfGraph, PmuSeries
from app.utils.time_utils import MS_PER_MINUTE

BASE_TIME_MS = 1_462_096_800_000


@pytest.fixture
def settings():
    """Create test settings instance."""
    return Settings()


@pytest.fixture
def logger():
    """Create test logger instance."""
    return get_logger(__name__)


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Small network that keeps the reference layout but trains in seconds."""
    return ModelConfig(conv_filters=(4, 4, 6, 6, 8, 8), input_size=16, spp_levels=(1, 2), dropout_rate=0.0)


@pytest.fixture
def make_series():
    """Factory for PmuSeries with optional missing samples."""

    def make(
        voltage,
        freq_dev=None,
        pmu_id="PMU001",
        sample_rate_hz=60,
        t0_ms=BASE_TIME_MS - MS_PER_MINUTE,
        status=None,
    ):
        voltage = np.asarray(voltage, dtype=np.float64)
        freq_dev = np.zeros_like(voltage) if freq_dev is None else np.asarray(freq_dev, dtype=np.float64)
        return PmuSeries(
            pmu_id=pmu_id,
            sample_rate_hz=sample_rate_hz,
            t0_ms=t0_ms,
            voltage=voltage,
            freq_dev=freq_dev,
            status=np.zeros(len(voltage), dtype=np.uint16) if status is None else status,
            voltage_missing=np.isnan(voltage),
            freq_missing=np.isnan(freq_dev),
        )

    return make


@pytest.fixture
def make_window():
    """Factory for random-walk EventWindows."""

    def make(event_id=1, pmu_id="PMU001", label=EventType.LINE_OUTAGE, n=120, seed=0):
        gen = np.random.default_rng(seed)
        return EventWindow(
            event_id=event_id,
            pmu_id=pmu_id,
            label=label,
            samples_v=1.0 + np.cumsum(gen.normal(0.0, 0.001, n)),
            samples_f=np.cumsum(gen.normal(0.0, 0.001, n)),
            onset_ms=BASE_TIME_MS,
            quality=0.0,
        )

    return make


@pytest.fixture
def separable_graphs():
    """
    Factory for graphs whose class is written into one quadrant of channel 0.

    Class 4 (Normal) carries no quadrant, so every class is linearly separable
    from the 2x2 pyramid level alone.
    """

    def make(n=16, events_per_class=2, pmus_per_event=2, seed=0, noise=0.05):
        gen = np.random.default_rng(seed)
        half = n // 2
        quadrants = [
            (slice(0, half), slice(0, half)),
            (slice(0, half), slice(half, n)),
            (slice(half, n), slice(0, half)),
            (slice(half, n), slice(half, n)),
        ]
        graphs = []
        event_id = 0
        for index, label in enumerate(CLASS_LABELS):
            for _ in range(events_per_class):
                event_id += 1
                for p in range(pmus_per_event):
                    data = gen.uniform(0.0, noise, (n, n, 2))
                    if index < len(quadrants):
                        rows, cols = quadrants[index]
                        data[rows, cols, 0] += 1.0
                    graphs.append(MtfGraph(event_id=event_id, pmu_id=f"PMU{p + 1:03d}", label=label, q=8, data=data))
        return graphs

    return make
