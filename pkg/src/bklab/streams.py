"""Per-replicate random streams and a deterministic replicate runner.

Replicate ``i`` of stream ``k`` always draws from
``SeedSequence(seed, spawn_key=(k, i))``, so results depend only on the
master seed and the replicate index, never on how work is split between
worker processes.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

THREADS_ENV = "BKLAB_THREADS"


def replicate_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(index))))


def resolve_workers(workers=None) -> int:
    if workers is None:
        workers = int(os.environ.get(THREADS_ENV, "1") or 1)
    return max(1, int(workers))


def _run_chunk(fn, seed, stream, lo, hi):
    return [fn(replicate_rng(seed, i, stream), i) for i in range(lo, hi)]


def run_replicates(fn, replicates: int, seed: int, stream: int = 0, workers=None, chunk: int = 2048):
    """Evaluate ``fn(rng, i)`` for ``i < replicates`` and return results in index order.

    ``fn`` must be picklable when more than one worker is used.
    """
    workers = resolve_workers(workers)
    bounds = [(lo, min(lo + chunk, replicates)) for lo in range(0, replicates, chunk)]
    if workers == 1 or len(bounds) <= 1:
        out = []
        for lo, hi in bounds:
            out.extend(_run_chunk(fn, seed, stream, lo, hi))
        return out
    out = []
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, fn, seed, stream, lo, hi) for lo, hi in bounds]
        for fut in futures:
            out.extend(fut.result())
    return out
