"""Helper functions shared by the library modules and the command line."""
import logging
from concurrent.futures import ProcessPoolExecutor
from functools import wraps

import numpy as np

logger = logging.getLogger(__name__)


def image_seed(seed, index):
    """Per-image seed: the run seed XOR the image's position in the corpus."""
    return int(seed) ^ int(index)


def id_sort_key(image_id):
    """Order image ids deterministically; integers sort before strings."""
    if isinstance(image_id, (int, np.integer)) and not isinstance(image_id,
                                                                  bool):
        return (0, int(image_id), "")
    return (1, 0, str(image_id))


def parallel_map(func, items, workers=1):
    """Apply ``func`` to every item, in a process pool when workers > 1.

    Results come back in the order of ``items`` regardless of which worker
    finished first.

    Args:
        func: A picklable callable taking one item
        items: The work items
        workers: Number of worker processes

    Returns:
        list of results
    """
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    logger.debug(f"Running {len(items)} items on {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def log_call(f):
    """Log entry and exit of a command at debug level."""

    @wraps(f)
    def decorator(*args, **kwargs):
        logger.debug(f"Started {f.__name__}")
        result = f(*args, **kwargs)
        logger.debug(f"Finished {f.__name__}")
        return result
    return decorator
