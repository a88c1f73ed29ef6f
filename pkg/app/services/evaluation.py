"""Evaluation - confusion matrices, system-level voting and the missing-data sensitivity study."""

import math
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

from app.core.config import Settings
from app.core.logging_config import timed
from app.models.schemas import (
    ConfusionMatrix,
    DefectSpec,
    EventType,
    EventWindow,
    MtfGraph,
    SensitivityCurve,
    SensitivityPoint,
    SystemVote,
)
from app.services.classifier import TrainedModel, label_indices, predict_proba
from app.services.mtf_encoder import encode_window
from app.services.preprocess import WINDOW_SAMPLES
from app.services.synthetic import place_missing_runs
from app.utils.error_handler import EmptyInputError, InvalidParameterError
from app.utils.parallel_executor import ParallelExecutor

REMOVAL_MODES = ("delete", "linear")
MAX_REMOVAL_FRACTION = 0.5


# ============================================================================
# PMU-level metrics
# ============================================================================


def confusion_from_indices(
    predicted: Sequence[int], true: Sequence[int], labels: Sequence[EventType]
) -> ConfusionMatrix:
    """Tally counts[predicted, true]."""
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    np.add.at(counts, (np.asarray(predicted, dtype=np.int64), np.asarray(true, dtype=np.int64)), 1)
    return ConfusionMatrix(counts=counts, labels=tuple(labels))


def evaluate(model: TrainedModel, graphs: Sequence[MtfGraph]) -> ConfusionMatrix:
    """
    Classify every graph and tally predictions against labels.

    Argmax ties go to the lowest class index.

    Raises:
        EmptyInputError: No graphs
    """
    if not graphs:
        raise EmptyInputError("evaluation set is empty")
    predicted = np.argmax(predict_proba(model, graphs), axis=1)
    return confusion_from_indices(predicted, label_indices(model, graphs), model.labels)


# ============================================================================
# System-level vote
# ============================================================================


def system_level_vote(predictions: Sequence[int], threshold: float = 0.9) -> SystemVote:
    """
    Declare the modal per-PMU class when its share exceeds `threshold`.

    Ties between modal classes go to the lowest index; the result does not
    depend on the order of `predictions`.

    Raises:
        EmptyInputError: No predictions
    """
    if len(predictions) == 0:
        raise EmptyInputError("system-level vote needs at least one PMU prediction")
    counts = np.bincount(np.asarray(predictions, dtype=np.int64))
    mode = int(np.argmax(counts))
    share = float(counts[mode] / len(predictions))
    return SystemVote(label_index=mode if share > threshold else None, share=share)


def system_level_votes(
    model: TrainedModel, graphs: Sequence[MtfGraph], threshold: float = 0.9
) -> dict[int, tuple[SystemVote, int]]:
    """Vote per event: event_id -> (vote, true class index)."""
    if not graphs:
        raise EmptyInputError("evaluation set is empty")
    predicted = np.argmax(predict_proba(model, graphs), axis=1)
    true = label_indices(model, graphs)
    by_event: dict[int, list[int]] = {}
    truth: dict[int, int] = {}
    for graph, pred, label in zip(graphs, predicted, true):
        by_event.setdefault(graph.event_id, []).append(int(pred))
        truth[graph.event_id] = int(label)
    return {event_id: (system_level_vote(preds, threshold), truth[event_id]) for event_id, preds in sorted(by_event.items())}


def system_level_accuracy(votes: dict[int, tuple[SystemVote, int]]) -> float:
    """Share of events identified as their true class; unidentified counts as wrong."""
    if not votes:
        raise EmptyInputError("no events to score")
    correct = sum(1 for vote, true in votes.values() if vote.identified and vote.label_index == true)
    return correct / len(votes)


# ============================================================================
# Reports
# ============================================================================


def confusion_frame(matrix: ConfusionMatrix) -> pd.DataFrame:
    """Rows are predicted classes, columns true classes."""
    names = [label.value for label in matrix.labels]
    frame = pd.DataFrame(matrix.counts, columns=names)
    frame.insert(0, "predicted", names)
    return frame


def per_class_frame(matrix: ConfusionMatrix) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "label": [label.value for label in matrix.labels],
            "precision": matrix.precision,
            "recall": matrix.recall,
            "predicted": matrix.counts.sum(axis=1),
            "support": matrix.counts.sum(axis=0),
        }
    )


def summary_text(matrix: ConfusionMatrix, system_accuracy: Optional[float] = None, events: Optional[int] = None) -> str:
    lines = [
        f"windows: {matrix.total}",
        f"pmu_level_accuracy: {matrix.accuracy:.4f}",
    ]
    if system_accuracy is not None:
        lines.append(f"events: {events}")
        lines.append(f"system_level_accuracy: {system_accuracy:.4f}")
    for label, precision, recall in zip(matrix.labels, matrix.precision, matrix.recall):
        lines.append(f"{label.value}: precision {precision:.4f} recall {recall:.4f}")
    return "\n".join(lines) + "\n"


def sensitivity_frame(curve: SensitivityCurve) -> pd.DataFrame:
    return pd.DataFrame(
        [point.model_dump() for point in curve.points],
        columns=["missing_fraction", "mean_accuracy", "std_accuracy", "trials"],
    )


# ============================================================================
# Missing-data sensitivity
# ============================================================================


def remove_samples(
    window: EventWindow, removed: int, rng: np.random.Generator, mode: str = "delete", runs: int = 1
) -> tuple[np.ndarray, np.ndarray]:
    """
    Knock out `removed` samples in `runs` random, mutually separated consecutive blocks.

    "delete" drops them, shortening both channels; "linear" re-fills them by
    linear interpolation and keeps the full length.

    Returns:
        (voltage, frequency) arrays
    """
    v, f = window.samples_v, window.samples_f
    if removed == 0:
        return v, f
    spec = DefectSpec(missing_fraction=removed / len(v), run_length=math.ceil(removed / runs))
    gone = place_missing_runs(len(v), spec, rng)
    if mode == "delete":
        return v[~gone], f[~gone]
    keep = np.flatnonzero(~gone)
    positions = np.arange(len(v))
    return np.interp(positions, keep, v[keep]), np.interp(positions, keep, f[keep])


class SensitivityStudy:
    """Monte Carlo accuracy under consecutive missing samples, classified through the SPP path."""

    def __init__(self, settings: Settings, logger: Any):
        """
        Initialize sensitivity study.

        Args:
            settings: Application settings
            logger: Logger instance
        """
        self.settings = settings
        self.logger = logger
        self.executor = ParallelExecutor(settings, logger)

    def run(
        self,
        model: TrainedModel,
        windows: Sequence[EventWindow],
        fractions: Sequence[float],
        trials: int = 20,
        seed: Optional[int] = None,
        mode: str = "delete",
        runs: int = 1,
        q: Optional[int] = None,
    ) -> SensitivityCurve:
        """
        Average accuracy over `trials` removal draws per missing fraction.

        Fractions whose shortened windows fall below the model's minimum input
        size are skipped with a warning. Every (fraction, trial) pair gets its
        own child seed and results are reduced in trial order, so the curve is
        reproducible whatever the worker count. At fraction 0 nothing is
        removed and the accuracy equals `evaluate` on the encoded windows.

        Args:
            model: Trained model
            windows: Labeled quality-gated windows
            fractions: Shares of each window to remove, within [0, 0.5]
            trials: Monte Carlo trials per fraction
            seed: Root seed (settings.seed by default)
            mode: "delete" or "linear"
            runs: Blocks removed per window
            q: Quantile bins (settings.q by default)

        Returns:
            SensitivityCurve with fractions ascending
        """
        if not windows:
            raise EmptyInputError("sensitivity study needs at least one window")
        if mode not in REMOVAL_MODES:
            raise InvalidParameterError(f"mode must be one of {REMOVAL_MODES}, got {mode!r}")
        if trials < 1 or runs < 1:
            raise InvalidParameterError("trials and runs must be at least 1")
        ordered = sorted(set(float(f) for f in fractions))
        if not ordered or ordered[0] < 0 or ordered[-1] > MAX_REMOVAL_FRACTION:
            raise InvalidParameterError(f"fractions must be a non-empty subset of [0, {MAX_REMOVAL_FRACTION}]")
        seed = self.settings.seed if seed is None else seed
        q = q or self.settings.q
        truth = label_indices(model, windows)

        plan = []
        for fraction in ordered:
            removed = round(fraction * WINDOW_SAMPLES)
            remaining = WINDOW_SAMPLES - removed if mode == "delete" else WINDOW_SAMPLES
            if remaining < model.min_input_size:
                self.logger.warning(
                    f"Skipping fraction {fraction:.3f}: {remaining}-sample windows are below "
                    f"the minimum input size {model.min_input_size}"
                )
                continue
            plan.append((fraction, removed))

        children = np.random.SeedSequence(seed).spawn(len(plan) * trials)
        tasks = []
        names = []
        for p, (fraction, removed) in enumerate(plan):
            for trial in range(trials):
                child = children[p * trials + trial]
                tasks.append(self._trial_task(model, windows, truth, removed, child, mode, runs, q))
                names.append(f"fraction_{fraction:.3f}_trial_{trial}")

        with timed(self.logger, f"Sensitivity study ({len(tasks)} trials)"):
            accuracies = ParallelExecutor.raise_first(self.executor.execute_batch(tasks, names))

        points = []
        for p, (fraction, _) in enumerate(plan):
            values = np.array(accuracies[p * trials : (p + 1) * trials])
            points.append(
                SensitivityPoint(
                    missing_fraction=fraction,
                    mean_accuracy=float(values.mean()),
                    std_accuracy=float(values.std()),
                    trials=trials,
                )
            )
            self.logger.info(f"Missing {fraction:.1%}: accuracy {values.mean():.4f} +/- {values.std():.4f}")
        return SensitivityCurve(points=points, mode=mode)

    @staticmethod
    def _trial_task(
        model: TrainedModel,
        windows: Sequence[EventWindow],
        truth: np.ndarray,
        removed: int,
        child: np.random.SeedSequence,
        mode: str,
        runs: int,
        q: int,
    ) -> Any:
        def task() -> float:
            rng = np.random.default_rng(child)
            graphs = []
            for window in windows:
                v, f = remove_samples(window, removed, rng, mode, runs)
                graphs.append(encode_window(window, q, v, f))
            predicted = np.argmax(predict_proba(model, graphs), axis=1)
            return float(np.mean(predicted == truth))

        return task
