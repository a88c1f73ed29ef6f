"""Structured logging configuration for the event identification pipeline."""

import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Optional

from loguru import logger

CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{extra[name]}</cyan> | <level>{message}</level>"
)
FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {extra[name]} | {message} | {extra}"


def setup_logging(
    log_level: str = "INFO",
    log_file: Optional[Path] = None,
    rotation: str = "10 MB",
    retention: str = "7 days",
) -> None:
    """
    Configure console logging on stderr and an optional rotating log file.

    stdout is left to command output (predictions, reports), so nothing is
    ever logged there.

    Args:
        log_level: DEBUG, INFO, WARNING or ERROR
        log_file: Optional path to a log file
        rotation: Log rotation size
        retention: Log retention period
    """
    logger.remove()
    logger.configure(extra={"name": "pmu_event_id"})

    logger.add(sys.stderr, format=CONSOLE_FORMAT, level=log_level.upper(), colorize=True)

    if log_file:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            log_file,
            format=FILE_FORMAT,
            level=log_level.upper(),
            rotation=rotation,
            retention=retention,
        )


def get_logger(name: str, **context: Any) -> Any:
    """
    Get a logger with bound context.

    Args:
        name: Logger name (typically __name__)
        **context: Extra fields such as command, event_id, pmu_id, epoch

    Returns:
        Bound loguru logger
    """
    return logger.bind(name=name, **context)


@contextmanager
def timed(log: Any, stage: str, level: str = "INFO") -> Iterator[dict[str, float]]:
    """
    Log the wall-clock duration of a pipeline stage.

    Yields a dict whose "elapsed_s" key is filled in on exit, so callers can
    report the duration themselves.
    """
    record: dict[str, float] = {"elapsed_s": 0.0}
    start = time.perf_counter()
    log.debug(f"{stage} started")
    try:
        yield record
    finally:
        record["elapsed_s"] = time.perf_counter() - start
        log.log(level, f"{stage} finished in {record['elapsed_s']:.2f}s")


setup_logging()
