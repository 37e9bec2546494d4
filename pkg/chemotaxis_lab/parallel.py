"""
Ordered fan-out helpers capped by the RT_THREADS setting.

Work is always split into contiguous slices and results are merged in
input order, so output is bit-identical for every worker count.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Sequence, TypeVar

import numpy as np
from django.conf import settings

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def worker_count() -> int:
    """Number of workers allowed for this process (at least 1)"""
    return max(1, int(getattr(settings, 'RT_THREADS', 1) or 1))


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: int = None) -> List[R]:
    """Apply fn to every item, possibly concurrently, returning results in input order"""
    items = list(items)
    workers = min(workers or worker_count(), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def slices(length: int, workers: int = None) -> Sequence[slice]:
    """Contiguous slices covering range(length), one per worker"""
    workers = min(workers or worker_count(), max(1, length))
    bounds = np.linspace(0, length, workers + 1).astype(int)
    return [slice(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def apply_in_slices(fn: Callable[[slice], None], length: int, workers: int = None) -> None:
    """Run fn on disjoint slices of an axis; fn must only write inside its slice"""
    map_ordered(fn, slices(length, workers), workers)
