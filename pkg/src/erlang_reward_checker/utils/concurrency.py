import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

from erlang_reward_checker.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int | None = None) -> list[R]:
    """Map ``fn`` over ``items`` in input order, on at most ``threads`` workers."""
    workers = min(threads or settings.threads, len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    logger.debug("Running %d tasks on %d threads", len(items), workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
