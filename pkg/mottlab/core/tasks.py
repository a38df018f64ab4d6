from __future__ import annotations

import asyncio
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

ENV_STREAM = 0
WALK_STREAM = 1


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed of ``seed`` for the integer path ``keys``."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    hi, lo = (int(v) for v in seq.generate_state(2, np.uint32))
    return ((hi << 32) | lo) & ((1 << 63) - 1)


async def _gather(fn: Callable[[T], R], items: Sequence[T], jobs: int) -> list[R]:
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [loop.run_in_executor(pool, fn, item) for item in items]
        return list(await asyncio.gather(*futures))


def run_tasks(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> list[R]:
    """Map ``fn`` over ``items`` and return results in item order.

    ``fn`` must be a picklable top-level function when ``jobs > 1``. Each task
    derives its randomness from its own item, so the result does not depend on
    ``jobs``.
    """
    work = list(items)
    if jobs <= 1 or len(work) <= 1:
        return [fn(item) for item in work]
    logger.info("dispatching %d tasks to %d workers", len(work), jobs)
    return asyncio.run(_gather(fn, work, min(jobs, len(work))))
