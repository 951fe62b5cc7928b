"""Ordered process-pool map; results come back in submission order."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def map_ordered(fn, items, jobs: int = 1):
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
