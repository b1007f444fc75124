"""
Thread-pool map and deterministic reductions
"""

import logging
from concurrent.futures import ThreadPoolExecutor

from birdie.config.settings import ANALYSIS_CONFIG

logger = logging.getLogger(__name__)


def resolve_threads(threads=None):
    return max(int(threads or ANALYSIS_CONFIG['threads']), 1)


def parallel_map(fn, items, threads=None):
    """
    Apply fn to every item, preserving input order in the result

    Args:
        fn: Callable of one argument
        items: Iterable of work items
        threads: Worker cap (defaults to the configured thread count)

    Returns:
        List of results in item order
    """
    items = list(items)
    workers = min(resolve_threads(threads), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def tree_reduce(fn, values):
    """
    Pairwise reduction in a fixed shape

    The pairing depends only on len(values), so the result is independent of
    how many workers produced the values.
    """
    values = list(values)
    if not values:
        raise ValueError('tree_reduce of an empty sequence')
    while len(values) > 1:
        paired = [fn(values[i], values[i + 1]) for i in range(0, len(values) - 1, 2)]
        if len(values) % 2:
            paired.append(values[-1])
        values = paired
    return values[0]
