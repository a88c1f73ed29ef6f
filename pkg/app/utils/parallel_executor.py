"""Parallel Executor - bounded thread-pool fan-out with results kept in task order."""

import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Callable, Optional

from app.core.config import Settings


class ParallelExecutor:
    """Runs independent tasks (scenario generation, sensitivity trials) on a thread pool."""

    def __init__(self, settings: Settings, logger: Any):
        """
        Initialize parallel executor.

        Args:
            settings: Application settings
            logger: Logger instance
        """
        self.settings = settings
        self.logger = logger
        self.max_workers = max(1, settings.max_parallel_workers)

    def execute_batch(
        self,
        tasks: list[Callable[[], Any]],
        task_names: Optional[list[str]] = None,
        max_workers: Optional[int] = None,
    ) -> list[tuple[Any, Optional[Exception]]]:
        """
        Execute tasks with controlled concurrency.

        Results come back in the order the tasks were given, whatever order
        they finish in, so seeded work stays reproducible.

        Args:
            tasks: Zero-argument callables
            task_names: Optional names for logging
            max_workers: Overrides settings.max_parallel_workers

        Returns:
            One (result, exception) tuple per task
        """
        if not tasks:
            return []

        workers = max_workers or self.max_workers
        names = [
            task_names[i] if task_names and i < len(task_names) else f"task_{i + 1}"
            for i in range(len(tasks))
        ]
        start_time = time.perf_counter()
        results: list[tuple[Any, Optional[Exception]]] = [(None, None)] * len(tasks)

        if workers == 1:
            for index, task in enumerate(tasks):
                results[index] = self._run(task, names[index])
        else:
            self.logger.debug(f"Running {len(tasks)} tasks on {workers} workers")
            with ThreadPoolExecutor(max_workers=workers) as executor:
                future_to_index = {executor.submit(self._run, task, names[i]): i for i, task in enumerate(tasks)}
                for future in as_completed(future_to_index):
                    results[future_to_index[future]] = future.result()

        failed = sum(1 for _, error in results if error is not None)
        elapsed = time.perf_counter() - start_time
        self.logger.info(
            f"Batch complete: {len(tasks) - failed}/{len(tasks)} tasks succeeded in {elapsed:.2f}s "
            f"({workers} workers)"
        )
        return results

    def _run(self, task: Callable[[], Any], name: str) -> tuple[Any, Optional[Exception]]:
        try:
            return task(), None
        except Exception as e:
            self.logger.error(f"{name} failed: {e}")
            return None, e

    @staticmethod
    def raise_first(results: list[tuple[Any, Optional[Exception]]]) -> list[Any]:
        """Unwrap batch results, re-raising the first failure in task order."""
        for _, error in results:
            if error is not None:
                raise error
        return [result for result, _ in results]
