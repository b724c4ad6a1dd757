"""
Seed derivation: one global seed fans out to per-module, per-shot streams
so any module can be re-run on its own and reproduce the same numbers.
"""

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence, TypeVar

import numpy as np

DEFAULT_SEED = 20240501

T = TypeVar("T")


def tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_seed_sequence(seed: Optional[int], tag: str, index: int = 0) -> np.random.SeedSequence:
    base = DEFAULT_SEED if seed is None else int(seed)
    return np.random.SeedSequence([base & 0xFFFFFFFFFFFFFFFF, tag_key(tag), int(index)])


def derive_rng(seed: Optional[int], tag: str, index: int = 0) -> np.random.Generator:
    """Generator for (seed, tag, index); independent of scheduling order."""
    return np.random.default_rng(derive_seed_sequence(seed, tag, index))


def chunk_rngs(seed: Optional[int], tag: str, n_chunks: int) -> list[np.random.Generator]:
    return [derive_rng(seed, tag, i) for i in range(n_chunks)]


def worker_threads() -> int:
    try:
        return max(1, int(os.getenv("SIVNODE_THREADS", "1")))
    except ValueError:
        return 1


def map_chunks(func: Callable[[np.random.Generator, int], T], seed: Optional[int], tag: str, sizes: Sequence[int]) -> list[T]:
    """
    Apply func(rng, size) to each chunk with its own derived stream. Results
    come back in chunk order whatever the thread count.
    """
    rngs = chunk_rngs(seed, tag, len(sizes))
    threads = worker_threads()
    if threads == 1 or len(sizes) == 1:
        return [func(rng, size) for rng, size in zip(rngs, sizes)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, rngs, sizes))


def chunk_sizes(total: int, chunk: int) -> list[int]:
    full, rest = divmod(total, chunk)
    return [chunk] * full + ([rest] if rest else [])
