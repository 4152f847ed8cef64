"""Worker-pool plumbing with order-independent results.

Experiments decompose into units (fixed-size path blocks or repetition
indices) whose outputs depend only on their own derived seeds.  Units are
mapped either serially or over a process pool; results always come back
in unit order, so any worker count produces identical output.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

DEFAULT_BLOCK = 512


def resolve_workers(workers=None) -> int:
    """Worker count: explicit argument, ROTINV_WORKERS, or available cores."""
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("ROTINV_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_units(fn, args_list, workers=None):
    """Map fn over args_list, preserving order; fn must be picklable for >1 worker."""
    workers = resolve_workers(workers)
    args_list = list(args_list)
    if workers <= 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    chunksize = max(1, len(args_list) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, args_list, chunksize=chunksize))


def block_ranges(n_total: int, block: int = DEFAULT_BLOCK) -> list[tuple[int, int]]:
    """Partition range(n_total) into fixed-size blocks (the last may be short)."""
    return [(lo, min(lo + block, n_total)) for lo in range(0, n_total, block)]
