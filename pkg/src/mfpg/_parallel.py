import os
from concurrent.futures import ThreadPoolExecutor


def n_threads():
    """Worker cap from ``MFPG_THREADS`` (defaults to the CPU count)."""
    raw = os.environ.get("MFPG_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = os.cpu_count() or 1
    return max(1, n)


def chunk_bounds(n, n_chunks):
    n_chunks = max(1, min(n_chunks, n))
    edges = [round(i * n / n_chunks) for i in range(n_chunks + 1)]
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_chunks(fn, n, min_chunk=256):
    """Apply ``fn(start, stop)`` over row chunks of ``range(n)``.

    Results come back in chunk order. Each chunk only touches its own rows, so
    the assembled output does not depend on the worker count.
    """
    workers = n_threads()
    n_chunks = min(workers, max(1, n // min_chunk))
    bounds = chunk_bounds(n, n_chunks)
    if len(bounds) == 1:
        return [fn(*bounds[0])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))
