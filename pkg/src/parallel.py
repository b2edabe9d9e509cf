#!/usr/bin/env python3
"""
Seeded generators and ordered fan-out of independent work items.

Every randomized path draws from numpy's Philox counter-based generator
keyed by an explicit integer seed. Fan-out results come back in input
order, so reports assembled from them do not depend on the thread count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

from .config import get_config
from .errors import ContractError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for (seed, stream); distinct streams never overlap"""
    if seed is None or int(seed) < 0:
        raise ContractError(f"seed must be a nonnegative integer, got {seed!r}")
    key = np.array([int(seed), int(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Apply fn to every item, possibly on worker threads; keep input order"""
    items = list(items)
    threads = threads or get_config().NUM_THREADS

    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    logger.debug(f"Fanning out {len(items)} items over {threads} threads")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
