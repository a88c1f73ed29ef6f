"""Command-line pipeline - synthesize, encode, train, evaluate, predict and study data quality."""

import argparse
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import pandas as pd

from app.core.config import Settings, load_settings
from app.core.logging_config import get_logger, setup_logging, timed
from app.models.schemas import DefectSpec, EventWindow, MtfGraph, Prediction
from app.services.classifier import (
    ModelTrainer,
    build_model,
    model_config_from_settings,
    predict,
    split_by_event,
    training_config_from_settings,
)
from app.services.evaluation import (
    REMOVAL_MODES,
    SensitivityStudy,
    confusion_frame,
    evaluate,
    per_class_frame,
    sensitivity_frame,
    summary_text,
    system_level_accuracy,
    system_level_votes,
)
from app.services.mtf_encoder import encode_window, encode_windows
from app.services.pmu_data import compute_quality_stats, parse_signal_csv, write_event_log, write_signal_csv
from app.services.preprocess import survival_function
from app.services.synthetic import DatasetBuilder
from app.storage.checkpoint_store import CheckpointStore
from app.storage.repository import DataRepository, write_table
from app.utils.error_handler import (
    ConfigError,
    DataError,
    InvalidBatchError,
    InvalidParameterError,
    PmuEventError,
    ShapeError,
    UsageError,
    format_error_message,
    get_suggestion,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

DEFAULT_FRACTIONS = "0,0.05,0.1,0.15,0.2,0.25,0.3"
DEFAULT_KS = {
    "missing_fraction": "0,0.001,0.005,0.01,0.02,0.05,0.1,0.2,0.5",
    "gap_length": "1,2,5,10,20,50,100,200,500",
}

# Applied by `synth --defects`
DEFAULT_DEFECTS = DefectSpec(
    missing_fraction=0.01,
    run_length=6,
    run_length_jitter=3,
    spike_count=2,
    status_corruption_prob=0.001,
)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting, so main() owns the exit code."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


# ============================================================================
# Commands
# ============================================================================


def cmd_synth(args: argparse.Namespace, settings: Settings, logger: Any) -> int:
    out = Path(args.out)
    builder = DatasetBuilder(settings, logger)
    repository = DataRepository(settings, logger)
    dataset = builder.build_dataset(
        per_class=args.per_class,
        defects=DEFAULT_DEFECTS if args.defects else None,
        keep_signals=args.signals,
    )

    repository.save_windows(dataset.windows, out / "windows.csv")
    repository.save_graphs(dataset.graphs, out / "graphs")
    (out / "events.csv").write_text(write_event_log(dataset.log_entries), encoding="utf-8")
    write_table(
        pd.DataFrame(
            [r.model_dump() for r in dataset.rejections], columns=["event_id", "pmu_id", "bad_fraction", "reason"]
        ),
        out / "rejections.csv",
    )
    write_table(
        pd.DataFrame(
            [
                {
                    "event_id": event_id,
                    "label": event.log_entry.event_type.value,
                    "true_onset_ms": event.true_onset_ms,
                    "located_onset_ms": event.onset_ms,
                }
                for event_id, event in enumerate(dataset.events, start=1)
            ]
        ),
        out / "onsets.csv",
    )
    if args.signals:
        signals_dir = out / "signals"
        signals_dir.mkdir(parents=True, exist_ok=True)
        for event_id, event in enumerate(dataset.events, start=1):
            path = signals_dir / f"event_{event_id:05d}.csv"
            path.write_text(write_signal_csv(event.series), encoding="utf-8")
        logger.info(f"Wrote raw signals for {len(dataset.events)} events to {signals_dir}")
    return EXIT_OK


def cmd_encode(args: argparse.Namespace, settings: Settings, logger: Any) -> int:
    repository = DataRepository(settings, logger)
    windows = repository.load_windows(args.windows)
    with timed(logger, f"Encoding {len(windows)} windows"):
        graphs = encode_windows(windows, settings.q)
    repository.save_graphs(graphs, args.out)
    return EXIT_OK


def cmd_train(args: argparse.Namespace, settings: Settings, logger: Any) -> int:
    repository = DataRepository(settings, logger)
    graphs = repository.load_graphs(args.graphs)
    if not graphs:
        raise DataError(f"no graphs in {args.graphs}")

    model_config = model_config_from_settings(settings, head=args.head, input_size=graphs[0].data.shape[0])
    model = build_model(model_config, seed=settings.seed)
    logger.info(
        f"Model: {model.network.param_count():,} parameters "
        f"({model.network.trainable_count():,} trainable), head={model_config.head}"
    )
    ModelTrainer(settings, logger).train(model, graphs, training_config_from_settings(settings))

    CheckpointStore(settings, logger).save(model, args.out)
    if args.history:
        repository.save_history(model.history, args.history)
    return EXIT_OK


def _subset(items: Sequence[Any], subset: str, test_fraction: float, split_seed: int) -> list[Any]:
    if subset == "all":
        return list(items)
    _, test = split_by_event(items, test_fraction, split_seed)
    return [items[i] for i in test]


def cmd_eval(args: argparse.Namespace, settings: Settings, logger: Any) -> int:
    model = CheckpointStore(settings, logger).load(args.checkpoint)
    graphs = DataRepository(settings, logger).load_graphs(args.graphs)
    graphs = _subset(graphs, args.subset, model.test_fraction, model.split_seed)
    logger.info(f"Evaluating {len(graphs)} graphs ({args.subset} subset)")

    matrix = evaluate(model, graphs)
    votes = system_level_votes(model, graphs, settings.vote_threshold)
    system_accuracy = system_level_accuracy(votes)

    out = Path(args.out)
    write_table(confusion_frame(matrix), out / "confusion_matrix.csv")
    write_table(per_class_frame(matrix), out / "per_class.csv")
    summary = summary_text(matrix, system_accuracy, len(votes))
    (out / "summary.txt").write_text(summary, encoding="utf-8")
    print(summary, end="")
    logger.info(f"PMU-level accuracy {matrix.accuracy:.4f}, system-level accuracy {system_accuracy:.4f}")
    return EXIT_OK


def _format_prediction(prediction: Prediction, labels: Sequence[Any]) -> str:
    lines = [f"predicted: {prediction.label.value}"]
    lines += [f"{label.value}: {p:.6f}" for label, p in zip(labels, prediction.probabilities)]
    lines.append(f"latency_ms: {prediction.latency_ms:.3f}")
    return "\n".join(lines)


def cmd_predict(args: argparse.Namespace, settings: Settings, logger: Any) -> int:
    model = CheckpointStore(settings, logger).load(args.checkpoint)
    repository = DataRepository(settings, logger)
    graph: MtfGraph
    if args.graph:
        graph = repository.load_graph(args.graph)
    else:
        if args.index is None:
            raise UsageError("--windows requires --index")
        windows: list[EventWindow] = repository.load_windows(args.windows)
        if not 0 <= args.index < len(windows):
            raise UsageError(f"--index must be in [0, {len(windows)}), got {args.index}")
        graph = encode_window(windows[args.index], settings.q)

    prediction = predict(model, graph)
    print(_format_prediction(prediction, model.labels))
    return EXIT_OK


def cmd_sensitivity(args: argparse.Namespace, settings: Settings, logger: Any) -> int:
    model = CheckpointStore(settings, logger).load(args.checkpoint)
    windows = DataRepository(settings, logger).load_windows(args.windows)
    windows = _subset(windows, args.subset, model.test_fraction, model.split_seed)
    logger.info(f"Sensitivity study on {len(windows)} windows ({args.subset} subset, {args.impute})")

    curve = SensitivityStudy(settings, logger).run(
        model, windows, args.fractions, trials=args.trials, mode=args.impute
    )
    write_table(sensitivity_frame(curve), args.out)
    logger.info(f"Wrote sensitivity curve ({len(curve.points)} points) to {args.out}")
    return EXIT_OK


def cmd_quality(args: argparse.Namespace, settings: Settings, logger: Any) -> int:
    series = []
    for path in args.signals:
        parsed = parse_signal_csv(Path(path).read_bytes())
        logger.info(f"Parsed {len(parsed)} PMU series from {path}")
        series.extend(parsed)

    stats = compute_quality_stats(series)
    ks = args.ks if args.ks is not None else _float_list(DEFAULT_KS[args.measure])
    curve = survival_function(stats, ks, args.measure)
    write_table(pd.DataFrame({"k": curve.ks, "survival": curve.survival}), args.out)
    logger.info(f"Wrote {args.measure} survival over {len(stats)} PMU-days to {args.out}")
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace, Settings, Any], int]] = {
    "synth": cmd_synth,
    "encode": cmd_encode,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "sensitivity": cmd_sensitivity,
    "quality": cmd_quality,
}

# CLI flags that overlay settings of the same name
SETTING_FLAGS = ("seed", "pmu_count", "noise_sigma", "q", "epochs", "batch_size", "lr", "log_level")


# ============================================================================
# Parser
# ============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="pmu-event-id",
        description="PMU event identification - MTF graphs and an SPP-aided CNN",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", type=Path, default=None, help="Flat key=value config file")
    parser.add_argument(
        "--log-level",
        type=str.upper,
        default=None,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level (default: from settings, INFO)",
    )
    commands = parser.add_subparsers(dest="command", metavar="<command>")
    commands.required = True

    synth = commands.add_parser("synth", help="Generate a labeled synthetic dataset")
    synth.add_argument("--per-class", type=int, required=True, help="Events per class")
    synth.add_argument("--out", required=True, help="Output directory")
    synth.add_argument("--seed", type=int, default=None, help="Root seed (default: settings.seed)")
    synth.add_argument("--pmu-count", type=int, default=None, help="PMUs per event (default: 43)")
    synth.add_argument("--noise-sigma", type=float, default=None, help="Noise sigma in p.u. (default: 0.0005)")
    synth.add_argument("--q", type=int, default=None, help="Quantile bins for the graphs (default: 8)")
    synth.add_argument("--signals", action="store_true", help="Also write the raw signal CSV of every event")
    synth.add_argument("--defects", action="store_true", help="Inject missing runs, spikes and bad status words")

    encode = commands.add_parser("encode", help="Encode windows as MTF graphs")
    encode.add_argument("--windows", required=True, help="Window CSV")
    encode.add_argument("--out", required=True, help="Graph directory")
    encode.add_argument("--q", type=int, default=None, help="Quantile bins (default: 8)")

    train = commands.add_parser("train", help="Train the classifier")
    train.add_argument("--graphs", required=True, help="Graph directory")
    train.add_argument("--out", required=True, help="Checkpoint path")
    train.add_argument("--history", default=None, help="Optional training history CSV")
    train.add_argument("--epochs", type=int, default=None, help="Training epochs (default: 30)")
    train.add_argument("--batch-size", type=int, default=None, help="Mini-batch size (default: 32)")
    train.add_argument("--lr", type=float, default=None, help="Adam learning rate (default: 0.001)")
    train.add_argument("--seed", type=int, default=None, help="Init, split and shuffle seed")
    train.add_argument("--head", choices=["spp", "flatten"], default="spp", help="Network head (default: spp)")

    evaluate_cmd = commands.add_parser("eval", help="Evaluate a checkpoint")
    evaluate_cmd.add_argument("--checkpoint", required=True, help="Checkpoint path")
    evaluate_cmd.add_argument("--graphs", required=True, help="Graph directory")
    evaluate_cmd.add_argument("--out", required=True, help="Report directory")
    evaluate_cmd.add_argument("--subset", choices=["test", "all"], default="test", help="Graphs to score (default: test)")

    predict_cmd = commands.add_parser("predict", help="Classify one graph or window")
    predict_cmd.add_argument("--checkpoint", required=True, help="Checkpoint path")
    source = predict_cmd.add_mutually_exclusive_group(required=True)
    source.add_argument("--graph", default=None, help="Graph file")
    source.add_argument("--windows", default=None, help="Window CSV (with --index)")
    predict_cmd.add_argument("--index", type=int, default=None, help="0-based row in the window CSV")

    sensitivity = commands.add_parser("sensitivity", help="Accuracy under consecutive missing samples")
    sensitivity.add_argument("--checkpoint", required=True, help="Checkpoint path")
    sensitivity.add_argument("--windows", required=True, help="Window CSV")
    sensitivity.add_argument("--out", required=True, help="Curve CSV")
    sensitivity.add_argument(
        "--fractions", type=_float_list, default=_float_list(DEFAULT_FRACTIONS), help=f"(default: {DEFAULT_FRACTIONS})"
    )
    sensitivity.add_argument("--trials", type=int, default=20, help="Trials per fraction (default: 20)")
    sensitivity.add_argument("--seed", type=int, default=None, help="Root seed (default: settings.seed)")
    sensitivity.add_argument("--impute", choices=REMOVAL_MODES, default="delete", help="Removal handling (default: delete)")
    sensitivity.add_argument("--subset", choices=["test", "all"], default="test", help="Windows to score (default: test)")

    quality = commands.add_parser("quality", help="Missing-data survival curve of signal archives")
    quality.add_argument("--signals", nargs="+", required=True, help="Signal CSV files")
    quality.add_argument("--out", required=True, help="Curve CSV")
    quality.add_argument(
        "--measure", choices=["missing_fraction", "gap_length"], default="missing_fraction", help="(default: missing_fraction)"
    )
    quality.add_argument("--ks", type=_float_list, default=None, help="Ascending thresholds (default depends on measure)")
    return parser


def _exit_code(error: BaseException) -> int:
    if isinstance(error, (UsageError, ConfigError, InvalidParameterError, ShapeError, InvalidBatchError)):
        return EXIT_USAGE
    if isinstance(error, (DataError, OSError)):
        return EXIT_DATA
    return EXIT_USAGE


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main entrypoint.

    Returns:
        0 on success, 1 on a usage or config error, 2 on a data error
    """
    try:
        args = build_parser().parse_args(argv)
        overrides = {key: getattr(args, key, None) for key in SETTING_FLAGS}
        settings = load_settings(args.config, overrides)
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except PmuEventError as e:
        print(format_error_message("Parsing arguments", e, suggestion=get_suggestion(e)), file=sys.stderr)
        return EXIT_USAGE

    setup_logging(settings.log_level, Path(settings.log_file) if settings.log_file else None)
    logger = get_logger(__name__, command=args.command)

    logger.info("=" * 60)
    logger.info(f"{settings.app_name} v{settings.app_version}: {args.command}")
    logger.info("=" * 60)

    try:
        with timed(logger, args.command):
            code = COMMANDS[args.command](args, settings, logger)
    except (PmuEventError, OSError) as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        print(
            format_error_message(args.command, e, suggestion=get_suggestion(e)),
            file=sys.stderr,
        )
        return _exit_code(e)
    except Exception as e:
        logger.opt(exception=True).error(f"{args.command} failed unexpectedly: {e}")
        print(format_error_message(args.command, e), file=sys.stderr)
        return EXIT_USAGE

    logger.info("=" * 60)
    logger.info(f"{args.command} complete")
    logger.info("=" * 60)
    return code


if __name__ == "__main__":
    sys.exit(main())
