"""Deterministic fan-out over parents.

Workers are separate processes (spawned, not forked, so worker state is
always built the same way), results come back in submission order, and
nothing a worker computes depends on which process ran it — which is
what makes outputs byte-identical for any thread count.
"""

from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

from .errors import ValidationError

T = TypeVar("T")
R = TypeVar("R")


def default_threads() -> int:
    return os.cpu_count() or 1


def parallel_map(
    fn: Callable[[T], R],
    items: Sequence[T],
    threads: int,
    initializer: Callable[..., None] | None = None,
    initargs: Iterable = (),
) -> list[R]:
    """Order-preserving map, in-process when one thread is enough.

    ``initializer`` receives the shared read-only context exactly once
    per worker (or once in-process), so large payloads such as surface
    meshes are not re-pickled per item.
    """
    if threads < 1:
        raise ValidationError("thread count must be positive")
    if threads == 1 or len(items) <= 1:
        if initializer is not None:
            initializer(*initargs)
        return [fn(item) for item in items]
    ctx = mp.get_context("spawn")
    chunksize = max(1, -(-len(items) // (threads * 4)))
    with ProcessPoolExecutor(
        max_workers=threads,
        mp_context=ctx,
        initializer=initializer,
        initargs=tuple(initargs),
    ) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))
