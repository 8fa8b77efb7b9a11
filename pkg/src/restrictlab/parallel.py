"""Worker-pool helper; RESTRICTLAB_THREADS caps the number of threads."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
U = TypeVar("U")


def worker_count() -> int:
    raw = os.environ.get("RESTRICTLAB_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def pmap(fn: Callable[[T], U], items: Iterable[T]) -> List[U]:
    """Order-preserving map; runs inline when only one worker is allowed."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
