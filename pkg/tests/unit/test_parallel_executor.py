"""Tests for ParallelExecutor."""

import time

import pytest

from app.core.config import Settings
from app.utils.parallel_executor import ParallelExecutor


@pytest.fixture
def executor(logger):
    return ParallelExecutor(Settings(max_parallel_workers=4), logger)


def _task(value, delay=0.0):
    def run():
        time.sleep(delay)
        return value

    return run


def _failing(message):
    def run():
        raise ValueError(message)

    return run


def test_results_keep_task_order(executor):
    """Test that results come back in submission order whatever the finish order."""
    tasks = [_task(i, delay=0.05 * (4 - i)) for i in range(5)]

    results = executor.execute_batch(tasks)

    assert [result for result, _ in results] == [0, 1, 2, 3, 4]
    assert all(error is None for _, error in results)


def test_failures_are_captured(executor):
    """Test that a failing task is reported without stopping the others."""
    results = executor.execute_batch([_task(1), _failing("boom"), _task(3)], ["one", "two", "three"])

    assert results[0] == (1, None)
    assert isinstance(results[1][1], ValueError)
    assert results[2] == (3, None)


def test_raise_first_uses_task_order(executor):
    """Test that raise_first re-raises the earliest failure in task order."""
    results = executor.execute_batch([_task(1), _failing("first"), _failing("second")])

    with pytest.raises(ValueError, match="first"):
        ParallelExecutor.raise_first(results)


def test_raise_first_unwraps_results():
    """Test that successful results are unwrapped in order."""
    assert ParallelExecutor.raise_first([(1, None), (2, None)]) == [1, 2]


def test_single_worker_runs_sequentially(logger):
    """Test that one worker runs tasks in order on the calling thread."""
    seen = []
    executor = ParallelExecutor(Settings(max_parallel_workers=1), logger)

    executor.execute_batch([lambda i=i: seen.append(i) for i in range(4)])

    assert seen == [0, 1, 2, 3]


def test_empty_batch(executor):
    """Test that no tasks give no results."""
    assert executor.execute_batch([]) == []
