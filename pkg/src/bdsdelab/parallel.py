"""Order-preserving thread map used behind every deterministic merge."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """``[fn(x) for x in items]``, optionally on a thread pool; output order is input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def chunks(n: int, size: int) -> list[slice]:
    """Fixed partition of ``range(n)``; independent of the thread count."""
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]
