import concurrent.futures
import logging
import multiprocessing as mp
import time
from typing import Any, Callable, List, Optional, Sequence, Tuple

log = logging.getLogger(__name__)

# worker(args) -> [(index, result), ...] where args = (shared, chunk, start_idx)
ChunkWorker = Callable[[Tuple[Any, Sequence[Any], int]], List[Tuple[int, Any]]]


def calculate_chunk_size(num_items: int, max_workers: int) -> int:
    """Calculate chunk size based on number of items and workers."""
    return max(10, num_items // (max_workers * 4))


def split_into_chunks(
    items: Sequence[Any], shared: Any, chunk_size: int
) -> List[Tuple[Any, Sequence[Any], int]]:
    """Split items into ``(shared, chunk, start_idx)`` tasks."""
    chunks = []
    for i in range(0, len(items), chunk_size):
        chunks.append((shared, items[i : i + chunk_size], i))
    return chunks


def _print_progress(completed: int, total: int, start_time: float, unit: str):
    """Log a progress update with ETA calculation."""
    elapsed = time.time() - start_time
    rate = completed / elapsed if elapsed > 0 else 0
    eta = (total - completed) / rate if rate > 0 else 0
    log.info(
        "  Processed %d/%d %s... (%.1f %s/sec, ETA: %.1fs)",
        completed,
        total,
        unit,
        rate,
        unit,
        eta,
    )


def process_with_progress_updates(
    future_to_chunk: dict,
    total: int,
    chunk_size: int,
    start_time: float,
    unit: str = "items",
) -> List[Any]:
    """Collect chunk futures into an index-ordered result list."""
    results: List[Any] = [None] * total
    completed = 0

    for future in concurrent.futures.as_completed(future_to_chunk):
        chunk_results = future.result()
        for idx, value in chunk_results:
            results[idx] = value

        completed += len(chunk_results)
        if completed % (chunk_size * 2) == 0 or completed == total:
            _print_progress(completed, total, start_time, unit)

    return results


def run_sequential(
    worker: ChunkWorker, items: Sequence[Any], shared: Any, unit: str = "items"
) -> List[Any]:
    """Run ``worker`` over all items as one chunk in this process."""
    start_time = time.time()
    results: List[Any] = [None] * len(items)
    for idx, value in worker((shared, items, 0)):
        results[idx] = value
    elapsed = time.time() - start_time
    log.debug("sequential processing of %d %s took %.2fs", len(items), unit, elapsed)
    return results


def run_chunked_parallel(
    worker: ChunkWorker,
    items: Sequence[Any],
    shared: Any,
    max_workers: Optional[int] = None,
    chunk_size: Optional[int] = None,
    unit: str = "items",
) -> List[Any]:
    """
    Run ``worker`` over chunks of ``items`` in a process pool.

    Results come back in the order of ``items`` regardless of completion order.

    Args:
        worker: module-level function taking ``(shared, chunk, start_idx)``
        items: work items
        shared: read-only context sent with every chunk
        max_workers: number of processes (default: CPU count, capped at 12)
        chunk_size: items per chunk (default: automatically calculated)

    Returns:
        list of per-item results
    """
    if not items:
        return []
    if max_workers is None:
        max_workers = min(mp.cpu_count(), 12)  # cap pool overhead

    if chunk_size is None:
        chunk_size = calculate_chunk_size(len(items), max_workers)

    log.info(
        "Using %d processes with chunk size %d for %d %s",
        max_workers,
        chunk_size,
        len(items),
        unit,
    )

    chunks = split_into_chunks(items, shared, chunk_size)
    start_time = time.time()

    with concurrent.futures.ProcessPoolExecutor(max_workers=max_workers) as executor:
        future_to_chunk = {
            executor.submit(worker, chunk_args): chunk_args[2] for chunk_args in chunks
        }
        results = process_with_progress_updates(
            future_to_chunk, len(items), chunk_size, start_time, unit
        )

    elapsed = time.time() - start_time
    rate = len(items) / elapsed if elapsed > 0 else 0
    log.info("Parallel processing completed in %.2fs (%.1f %s/sec)", elapsed, rate, unit)
    return results


def choose_processing_method(
    worker: ChunkWorker,
    items: Sequence[Any],
    shared: Any,
    max_workers: Optional[int] = None,
    parallel_threshold: int = 500,
    unit: str = "items",
) -> List[Any]:
    """
    Pick sequential or process-pool execution from the workload size.

    ``max_workers == 1`` always runs sequentially.
    """
    if len(items) < parallel_threshold or max_workers == 1:
        return run_sequential(worker, items, shared, unit)
    return run_chunked_parallel(worker, items, shared, max_workers, unit=unit)
