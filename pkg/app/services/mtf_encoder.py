"""MTF Encoder - turns event windows into Markov transition field graphs."""

from typing import Iterable, Optional, Sequence

import numpy as np

from app.core.logging_config import get_logger
from app.models.schemas import EventWindow, MtfGraph, TransitionMatrix
from app.utils.error_handler import InvalidParameterError

logger = get_logger(__name__)

DEFAULT_Q = 8


def quantile_bins(x: Sequence[float], q: int) -> np.ndarray:
    """
    Assign each sample to one of q equal-population bins by rank.

    Samples are ranked by (value, index); rank r goes to bin floor(r*q/n) + 1,
    so every bin holds floor(n/q) or ceil(n/q) samples even for constant input.

    Args:
        x: n finite values
        q: Number of bins, 2 <= q <= n

    Returns:
        int64 bin labels in 1..q
    """
    values = np.asarray(x, dtype=np.float64)
    n = len(values)
    if q < 2 or q > n:
        raise InvalidParameterError(f"need 2 <= q <= n, got q={q}, n={n}")
    if not np.all(np.isfinite(values)):
        raise InvalidParameterError("quantile_bins requires finite values")

    order = np.argsort(values, kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    ranks[order] = np.arange(n)
    return ranks * q // n + 1


def transition_matrix(bins: Sequence[int], q: int) -> TransitionMatrix:
    """
    Row-stochastic first-order transition matrix between bins.

    Row a holds Pr{bin(t) = b | bin(t-1) = a}; rows of bins that are never
    left stay all-zero.
    """
    labels = np.asarray(bins, dtype=np.int64)
    if len(labels) < 2:
        raise InvalidParameterError("transition_matrix needs at least 2 bin labels")
    if labels.min() < 1 or labels.max() > q:
        raise InvalidParameterError(f"bin labels must lie in 1..{q}")

    counts = np.zeros((q, q), dtype=np.float64)
    np.add.at(counts, (labels[:-1] - 1, labels[1:] - 1), 1.0)
    outgoing = counts.sum(axis=1)
    matrix = np.divide(counts, outgoing[:, None], out=np.zeros_like(counts), where=outgoing[:, None] > 0)
    return TransitionMatrix(matrix=matrix, source_counts=outgoing)


def markov_transition_field(x: Sequence[float], q: int) -> np.ndarray:
    """
    n x n field with M[k1, k2] = W[bin(k1), bin(k2)].

    Args:
        x: n finite values
        q: Quantile bins

    Returns:
        float64 array in [0, 1]
    """
    bins = quantile_bins(x, q)
    w = transition_matrix(bins, q).matrix
    index = bins - 1
    return w[index[:, None], index[None, :]]


def encode_window(
    window: EventWindow,
    q: int = DEFAULT_Q,
    samples_v: Optional[np.ndarray] = None,
    samples_f: Optional[np.ndarray] = None,
) -> MtfGraph:
    """
    Encode both channels of a window as a 2-channel MTF graph.

    Channel 0 is the voltage field, channel 1 the frequency field; bins are
    computed per channel so the two never share boundaries. `samples_v` and
    `samples_f` replace the window's own samples (e.g. after removing some),
    giving an n x n graph for n remaining samples.
    """
    v = window.samples_v if samples_v is None else samples_v
    f = window.samples_f if samples_f is None else samples_f
    if len(v) != len(f):
        raise InvalidParameterError(f"channel lengths differ: {len(v)} vs {len(f)}")
    data = np.stack([markov_transition_field(v, q), markov_transition_field(f, q)], axis=-1)
    return MtfGraph(event_id=window.event_id, pmu_id=window.pmu_id, label=window.label, q=q, data=data)


def encode_windows(windows: Iterable[EventWindow], q: int = DEFAULT_Q) -> list[MtfGraph]:
    graphs = [encode_window(window, q) for window in windows]
    logger.debug(f"Encoded {len(graphs)} windows (q={q})")
    return graphs
