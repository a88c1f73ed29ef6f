"""Storage repository - window CSVs, MTF graph files and report tables."""

import struct
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.core.config import Settings
from app.models.schemas import EventType, EventWindow, MtfGraph, TrainingHistory
from app.services.preprocess import WINDOW_SAMPLES
from app.utils.error_handler import FormatError, ParseError

GRAPH_MAGIC = b"MTFG"
GRAPH_SUFFIX = ".mtfg"
GRAPH_INDEX = "index.csv"
GRAPH_INDEX_HEADER = ["event_id", "pmu_id", "label", "file"]
HISTORY_HEADER = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]

_GRAPH_HEADER = struct.Struct("<4sIII")
_GRAPH_DTYPE = np.dtype("<f4")

PathLike = Union[str, Path]


def window_columns(samples: int = WINDOW_SAMPLES) -> list[str]:
    return (
        ["event_id", "pmu_id", "label", "onset_ms"]
        + [f"v{i}" for i in range(samples)]
        + [f"f{i}" for i in range(samples)]
        + ["quality"]
    )


# ============================================================================
# Event windows
# ============================================================================


def windows_to_frame(windows: Sequence[EventWindow]) -> pd.DataFrame:
    """One row per window: identifiers, 120 voltage then 120 frequency samples, quality."""
    columns = window_columns()
    if not windows:
        return pd.DataFrame(columns=columns)
    samples = np.stack([np.concatenate([w.samples_v, w.samples_f]) for w in windows])
    frame = pd.DataFrame(samples, columns=columns[4:-1])
    frame.insert(0, "event_id", [w.event_id for w in windows])
    frame.insert(1, "pmu_id", [w.pmu_id for w in windows])
    frame.insert(2, "label", [w.label.value for w in windows])
    frame.insert(3, "onset_ms", [w.onset_ms for w in windows])
    frame["quality"] = [w.quality for w in windows]
    return frame


def frame_to_windows(frame: pd.DataFrame) -> list[EventWindow]:
    missing = [column for column in window_columns() if column not in frame.columns]
    if missing:
        raise FormatError(f"window table lacks columns: {missing[:5]}{'...' if len(missing) > 5 else ''}")
    try:
        v = frame[[f"v{i}" for i in range(WINDOW_SAMPLES)]].to_numpy(dtype=np.float64)
        f = frame[[f"f{i}" for i in range(WINDOW_SAMPLES)]].to_numpy(dtype=np.float64)
    except (KeyError, ValueError, TypeError) as e:
        raise FormatError(f"window table has unreadable sample columns: {e}") from e
    windows = []
    for row, record in enumerate(frame.itertuples(index=False)):
        try:
            windows.append(
                EventWindow(
                    event_id=int(record.event_id),
                    pmu_id=str(record.pmu_id),
                    label=EventType(record.label),
                    samples_v=v[row],
                    samples_f=f[row],
                    onset_ms=int(record.onset_ms),
                    quality=float(record.quality),
                )
            )
        except (ValueError, TypeError) as e:
            raise ParseError(f"invalid window record: {e}", line=row + 2) from e
    return windows


def write_windows_csv(windows: Sequence[EventWindow], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    windows_to_frame(windows).to_csv(path, index=False)
    return path


def read_windows_csv(path: PathLike) -> list[EventWindow]:
    try:
        frame = pd.read_csv(path, dtype={"pmu_id": str, "label": str})
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ParseError(f"cannot read window CSV {path}: {e}") from e
    return frame_to_windows(frame)


# ============================================================================
# MTF graphs
# ============================================================================


def graph_to_bytes(graph: MtfGraph) -> bytes:
    """Header (magic, n, channels, q as u32) followed by row-major float32 data."""
    n, _, channels = graph.data.shape
    return _GRAPH_HEADER.pack(GRAPH_MAGIC, n, channels, graph.q) + np.ascontiguousarray(
        graph.data, dtype=_GRAPH_DTYPE
    ).tobytes()


def graph_from_bytes(
    blob: bytes, event_id: int = 0, pmu_id: str = "", label: EventType = EventType.UNKNOWN
) -> MtfGraph:
    if len(blob) < _GRAPH_HEADER.size:
        raise FormatError("graph file is shorter than its header")
    magic, n, channels, q = _GRAPH_HEADER.unpack_from(blob)
    if magic != GRAPH_MAGIC:
        raise FormatError(f"not an MTF graph file (magic {magic!r})")
    expected = _GRAPH_HEADER.size + n * n * channels * _GRAPH_DTYPE.itemsize
    if len(blob) != expected:
        raise FormatError(f"graph file holds {len(blob)} bytes, header implies {expected}")
    data = np.frombuffer(blob, dtype=_GRAPH_DTYPE, offset=_GRAPH_HEADER.size).reshape(n, n, channels)
    return MtfGraph(event_id=event_id, pmu_id=pmu_id, label=label, q=q, data=data.copy())


def graph_to_csv(graph: MtfGraph, path: PathLike) -> Path:
    """Debug dump: one row per (row, col) cell with one column per channel."""
    n, _, channels = graph.data.shape
    rows, cols = np.divmod(np.arange(n * n), n)
    frame = pd.DataFrame({"row": rows, "col": cols})
    names = ["voltage", "frequency"] if channels == 2 else [f"ch{c}" for c in range(channels)]
    for c, name in enumerate(names):
        frame[name] = graph.data[:, :, c].reshape(-1)
    path = Path(path)
    frame.to_csv(path, index=False)
    return path


# ============================================================================
# Tables
# ============================================================================


def history_to_frame(history: TrainingHistory) -> pd.DataFrame:
    return pd.DataFrame([record.model_dump() for record in history.epochs], columns=HISTORY_HEADER)


def write_table(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


class DataRepository:
    """Reads and writes the pipeline's on-disk artifacts."""

    def __init__(self, settings: Settings, logger: Any):
        """
        Initialize the repository.

        Args:
            settings: Application settings
            logger: Logger instance
        """
        self.settings = settings
        self.logger = logger

    def save_windows(self, windows: Sequence[EventWindow], path: PathLike) -> Path:
        path = write_windows_csv(windows, path)
        self.logger.info(f"Wrote {len(windows)} windows to {path}")
        return path

    def load_windows(self, path: PathLike) -> list[EventWindow]:
        path = Path(path)
        if not path.exists():
            raise FormatError(f"window file not found: {path}")
        windows = read_windows_csv(path)
        self.logger.info(f"Loaded {len(windows)} windows from {path}")
        return windows

    def save_graphs(self, graphs: Iterable[MtfGraph], directory: PathLike) -> Path:
        """
        Write one binary file per graph plus an index CSV.

        Args:
            graphs: Graphs to store
            directory: Output directory (created if needed)

        Returns:
            Path of the index file
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rows = []
        for position, graph in enumerate(graphs):
            name = f"{position:06d}{GRAPH_SUFFIX}"
            (directory / name).write_bytes(graph_to_bytes(graph))
            rows.append([graph.event_id, graph.pmu_id, graph.label.value, name])
        index = write_table(pd.DataFrame(rows, columns=GRAPH_INDEX_HEADER), directory / GRAPH_INDEX)
        self.logger.info(f"Wrote {len(rows)} graphs to {directory}")
        return index

    def load_graphs(self, directory: PathLike) -> list[MtfGraph]:
        directory = Path(directory)
        index_path = directory / GRAPH_INDEX
        if not index_path.exists():
            raise FormatError(f"graph index not found: {index_path}")
        index = pd.read_csv(index_path, dtype={"pmu_id": str, "label": str, "file": str})
        graphs = [
            self.load_graph(directory / row.file, int(row.event_id), row.pmu_id, EventType(row.label))
            for row in index.itertuples(index=False)
        ]
        self.logger.info(f"Loaded {len(graphs)} graphs from {directory}")
        return graphs

    def load_graph(
        self,
        path: PathLike,
        event_id: int = 0,
        pmu_id: str = "",
        label: Optional[EventType] = None,
    ) -> MtfGraph:
        path = Path(path)
        if not path.exists():
            raise FormatError(f"graph file not found: {path}")
        return graph_from_bytes(path.read_bytes(), event_id, pmu_id, label or EventType.UNKNOWN)

    def save_history(self, history: TrainingHistory, path: PathLike) -> Path:
        path = write_table(history_to_frame(history), path)
        self.logger.info(f"Wrote training history ({len(history)} epochs) to {path}")
        return path
