"""
Ordered parallel map over independent tasks
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, List, Sequence

logger = logging.getLogger(__name__)


def ordered_map(func: Callable[[Any], Any], items: Sequence[Any], threads: int = 1) -> List[Any]:
    """
    Apply func to every item, in parallel when threads > 1

    Results always come back in input order. Tasks must carry their own seeds
    so the output does not depend on scheduling.

    Args:
        func: Top-level (picklable) function of one argument
        items: Task arguments
        threads: Worker processes; 1 runs inline

    Returns:
        List of results aligned with items
    """
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    workers = min(threads, len(items))
    logger.debug(f"[Parallel] Running {len(items)} tasks on {workers} processes")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
