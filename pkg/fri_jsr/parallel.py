# fri_jsr/parallel.py
import threading
from multiprocessing.pool import ThreadPool
from typing import Callable, Iterable, List, Optional

from .settings import thread_count

_worker = threading.local()


def in_worker() -> bool:
    """True on a thread currently running an item for parallel_map."""
    return getattr(_worker, "active", False)


def _marked(fn: Callable) -> Callable:
    def call(item):
        _worker.active = True
        try:
            return fn(item)
        finally:
            _worker.active = False
    return call


def parallel_map(fn: Callable, items: Iterable, width: Optional[int] = None) -> List:
    """
    Map fn over items and return results in input order.
    Runs on a thread pool (numpy releases the GIL inside BLAS); width 1 runs inline.
    A map issued from inside a worker also runs inline on that worker, so
    nested maps (a sweep chain training JSR candidates) never exceed the
    outer width. Reductions over the result list stay in index order, so
    outcomes do not depend on the pool width.
    """
    items = list(items)
    width = thread_count() if width is None else max(1, int(width))
    width = min(width, len(items))
    if width <= 1 or in_worker():
        return [fn(it) for it in items]
    with ThreadPool(width) as pool:
        return pool.map(_marked(fn), items)
