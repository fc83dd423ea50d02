"""
Worker pool for the embarrassingly parallel parts of qchaos.
Runs pure job functions on anyio worker threads; the numerical kernels
release the GIL, so jobs execute concurrently.
"""

import logging
from typing import Callable, List, Optional, Sequence, TypeVar

import anyio
import anyio.to_thread

from .config import settings

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


class WorkerPool:
    """Maps jobs over a bounded set of worker threads, preserving input order."""

    def __init__(self, threads: int):
        """
        Initialize the worker pool.

        Args:
            threads: Maximum number of jobs running at once
        """
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        self.threads = threads

    def map(self, func: Callable[[T], R], items: Sequence[T]) -> List[R]:
        """
        Apply func to every item.

        Results come back in the order of items regardless of completion
        order. If any job raises, the exception of the lowest-index failing
        job is re-raised once all jobs have finished.

        Args:
            func: Pure function of one argument
            items: Job inputs

        Returns:
            List of results
        """
        items = list(items)
        if not items:
            return []
        if self.threads == 1 or len(items) == 1:
            return [func(item) for item in items]
        return anyio.run(self._map, func, items)

    async def _map(self, func: Callable[[T], R], items: List[T]) -> List[R]:
        limiter = anyio.CapacityLimiter(self.threads)
        results: List[Optional[R]] = [None] * len(items)
        errors: List[Optional[BaseException]] = [None] * len(items)

        async def run_one(index: int, item: T) -> None:
            try:
                results[index] = await anyio.to_thread.run_sync(func, item, limiter=limiter)
            except Exception as e:
                errors[index] = e

        async with anyio.create_task_group() as tg:
            for index, item in enumerate(items):
                tg.start_soon(run_one, index, item)

        for error in errors:
            if error is not None:
                raise error
        return results

    def __repr__(self) -> str:
        return f"WorkerPool(threads={self.threads})"


# Global worker pool instance
_worker_pool: Optional[WorkerPool] = None


def get_worker_pool(threads: Optional[int] = None) -> WorkerPool:
    """
    Get the global worker pool, creating or resizing it as needed.

    Args:
        threads: Desired size; defaults to the configured thread count

    Returns:
        WorkerPool instance
    """
    global _worker_pool

    wanted = threads or settings.threads
    if _worker_pool is None or _worker_pool.threads != wanted:
        _worker_pool = WorkerPool(wanted)
        logger.info(f"Worker pool ready with {wanted} threads")
    return _worker_pool


def shutdown_worker_pool() -> None:
    """Drop the global worker pool."""
    global _worker_pool

    if _worker_pool:
        logger.info("Shutting down worker pool")
        _worker_pool = None
