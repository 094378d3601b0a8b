"""Small shared helpers: seeded substreams, bounded thread fan-out,
deterministic JSON output."""

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def rng_for(seed, *names):
    """Independent numpy Generator for a named substream of a root seed.

    The stream key is derived from the printable names, so the same
    (seed, names) pair gives the same stream no matter which other
    streams were drawn before it.
    """
    digest = hashlib.sha256("\x1f".join(str(n) for n in names).encode()).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1)] + words))


def worker_count():
    """Worker cap from SILHLIFT_THREADS (default 1: serial)."""
    raw = os.environ.get("SILHLIFT_THREADS", "").strip()
    if not raw:
        return 1
    n = int(raw)
    return max(1, n)


def thread_map(fn, items):
    """Map preserving order, fanning out over SILHLIFT_THREADS workers.

    Each item must be independent of the others; results are collected
    in input order so worker count never changes the output.
    """
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def dump_json(obj, path):
    """Write JSON with a stable layout (insertion order, indent 1)."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)
        fh.write("\n")
