"""Worker-count policy and an order-preserving parallel map.

The environment variable ``GMTGP_THREADS`` caps parallelism; results keep
their input order, so parallel runs stay bit-identical to serial ones.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

__all__ = ["worker_count", "map_workers"]

_ENV = "GMTGP_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def worker_count(n_items: int | None = None) -> int:
    """Workers to use: min(GMTGP_THREADS or cpu count, items)."""
    raw = os.environ.get(_ENV, "").strip()
    if raw:
        try:
            cap = int(raw)
        except ValueError as exc:
            raise ValueError(f"{_ENV} must be an integer, got {raw!r}") from exc
        if cap < 1:
            raise ValueError(f"{_ENV} must be >= 1")
    else:
        cap = os.cpu_count() or 1
    if n_items is not None:
        cap = min(cap, max(1, n_items))
    return cap


def map_workers(fn: Callable[[T], R], items: Sequence[T] | Iterable[T]) -> list[R]:
    """Apply ``fn`` to every item, in order, possibly on a thread pool."""
    items = list(items)
    workers = worker_count(len(items))
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
