"""Counter-based Gaussian increments.

Path number ``stream`` owns a fixed block of Philox counters, so any range of
paths can be regenerated in any order or chunking with bit-identical output.
Within a path, raw draw ``s * k + i`` feeds increment (s, i).
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import ndtri

_WORDS_PER_BLOCK = 4  # Philox4x64 emits four 64-bit words per counter value
_TWO_M53 = 2.0 ** -53


def blocks_per_path(draws):
    return -(-draws // _WORDS_PER_BLOCK)


def standard_normals(seed, stream0, count, draws):
    """(count, draws) standard normals for paths stream0 .. stream0 + count - 1."""
    if count <= 0:
        return np.empty((0, draws))
    per = blocks_per_path(draws)
    gen = np.random.Philox(key=int(seed) % 2**64, counter=int(stream0) * per)
    raw = gen.random_raw(count * per * _WORDS_PER_BLOCK).reshape(count, per * _WORDS_PER_BLOCK)
    u = ((raw[:, :draws] >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    return ndtri(u)


def thread_count():
    env = os.environ.get("HYPOLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def chunk_ranges(start, count, chunk):
    """Fixed chunking of [start, start + count); independent of thread count."""
    return [(s, min(chunk, start + count - s)) for s in range(start, start + count, chunk)]


def map_chunks(fn, ranges, threads=None):
    """Apply ``fn(stream0, count)`` to each chunk; results in chunk order."""
    threads = thread_count() if threads is None else threads
    if threads <= 1 or len(ranges) <= 1:
        return [fn(s, c) for s, c in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda r: fn(*r), ranges))
