"""
Service for running independent numeric jobs concurrently.
"""
import asyncio
import logging
from typing import Any, Callable, Iterable, List, Optional

from app.core.config import settings

logger = logging.getLogger(__name__)


async def _run_one(func: Callable, item: Any, semaphore: asyncio.Semaphore):
    """
    Run one job in a worker thread.

    Args:
        func: job function taking a single item
        item: job input
        semaphore: Semaphore to limit concurrent workers

    Returns:
        The job result
    """
    async with semaphore:
        return await asyncio.to_thread(func, item)


async def _run_all(func: Callable, items: List[Any], workers: int) -> List[Any]:
    semaphore = asyncio.Semaphore(workers)
    tasks = [_run_one(func, item, semaphore) for item in items]
    # gather keeps input order
    return await asyncio.gather(*tasks)


def run_batch(func: Callable, items: Iterable[Any], workers: Optional[int] = None) -> List[Any]:
    """
    Apply func to every item with at most `workers` jobs in flight.

    Args:
        func: job function, pure on its input
        items: job inputs
        workers: concurrency cap, KDIFF_THREADS by default

    Returns:
        Results in input order; the first job exception propagates
    """
    items = list(items)
    if not items:
        return []
    workers = max(1, workers or settings.KDIFF_THREADS)
    if workers == 1 or len(items) == 1:
        return [func(item) for item in items]
    logger.debug(f"Running {len(items)} jobs on {workers} workers")
    return asyncio.run(_run_all(func, items, workers))
