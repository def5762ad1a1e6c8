"""Realization loop: independent seeds, ordered results."""

from concurrent.futures import ThreadPoolExecutor
import os

from .. import rng


def default_threads():
    env = os.environ.get("HOMLAB_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def seeds(master, n, start=0):
    return [rng.derive_seed(master, i) for i in range(start, start + n)]


def run_realizations(fn, seed_list, threads=None):
    """``[fn(seed) for seed in seed_list]`` evaluated by a pool; order follows ``seed_list``."""
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(seed_list) <= 1:
        return [fn(s) for s in seed_list]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seed_list))
