"""Opt-in thread pool for the per-interval parallel-map contracts.

Worker count is capped by the QOT_THREADS environment variable; the
default of 1 keeps everything serial, which is fastest for desk-scale
matrices.  All mapped functions are pure, so results are order-preserving.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence


def worker_count() -> int:
    try:
        count = int(os.environ.get("QOT_THREADS", "1"))
    except ValueError:
        count = 1
    return max(1, count)


def pmap(fn: Callable, items: Iterable) -> list:
    """Order-preserving map, threaded when QOT_THREADS > 1."""
    items = list(items)
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
