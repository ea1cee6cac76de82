import os
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "TRANSLUCE_THREADS"


def resolve_threads(threads=None):
    if threads is None:
        threads = int(os.environ.get(THREADS_ENV, "1"))
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


def run_tasks(fn, tasks, threads=None):
    """Apply ``fn`` to every task, returning results in task order."""
    threads = resolve_threads(threads)
    tasks = list(tasks)
    if threads == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def tiles(width, height, size):
    """Fixed tiling of a raster; independent of the worker count."""
    return [(x0, y0, min(x0 + size, width), min(y0 + size, height))
            for y0 in range(0, height, size)
            for x0 in range(0, width, size)]
