import logging
import math
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TypeVar

from more_itertools import chunked

from slow_passage.utils.constants import FLOAT_FORMAT

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(
    func: Callable[[T], R],
    items: Iterable[T],
    threads: int = 1,
    batch_size: int = 8,
) -> list[R]:
    """Apply ``func`` to every item, preserving input order.

    Items are handed to the pool in batches so the executor queue stays short on
    long grids. With ``threads <= 1`` everything runs inline.

    Args:
        func: Pure function to apply.
        items: Work items.
        threads: Number of worker threads.
        batch_size: Items submitted per batch.

    Returns:
        list: ``[func(item) for item in items]`` in the same order.
    """
    work: Sequence[T] = list(items)
    if threads <= 1 or len(work) <= 1:
        return [func(item) for item in work]

    results: list[R] = []
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for batch in chunked(work, max(batch_size, threads)):
            results.extend(pool.map(func, batch))
    logger.debug(f"Mapped {len(work)} items on {threads} threads")
    return results


def format_number(value: float | int | None) -> str:
    """Format a number for CSV output with 17 significant digits."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, FLOAT_FORMAT)
