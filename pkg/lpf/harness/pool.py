# lpf/harness/pool.py

"""
Ordered job pool for independent trials
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def default_jobs() -> int:
    return max(os.cpu_count() or 1, 1)


def map_jobs(fn: Callable[[T], R], items: Iterable[T], jobs: Optional[int] = None) -> List[R]:
    """
    Apply fn to every item, possibly concurrently; results come back in input order.

    Each job seeds its own stream from its arguments, so the result does not
    depend on the number of workers.
    """
    items = list(items)
    workers = default_jobs() if jobs is None else jobs
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(fn, items))
