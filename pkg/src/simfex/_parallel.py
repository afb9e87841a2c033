"""Order-preserving parallel map over processes."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def ordered_map(func, items, n_jobs: int = 1):
    """``[func(x) for x in items]``, optionally spread over ``n_jobs`` processes.

    Results come back in input order, so any reduction done by the caller is
    independent of the number of workers.
    """
    items = list(items)
    if n_jobs is None or n_jobs <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(func, items, chunksize=max(1, len(items) // (4 * n_jobs))))


def chunk_ranges(n: int, n_chunks: int):
    """Split ``range(n)`` into at most ``n_chunks`` contiguous ranges."""
    n_chunks = max(1, min(n_chunks, n))
    bounds = [round(i * n / n_chunks) for i in range(n_chunks + 1)]
    return [range(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]
