from regime_ssm.analysis.parallel_processing import (
    calculate_chunk_size,
    choose_processing_method,
    run_chunked_parallel,
    run_sequential,
    split_into_chunks,
)


def _scaled_chunk(args):
    factor, chunk, start_idx = args
    return [(start_idx + i, factor * value) for i, value in enumerate(chunk)]


class TestChunking:
    """Splitting work into chunks."""

    def test_chunk_size_has_a_minimum(self):
        assert calculate_chunk_size(5, 4) == 10
        assert calculate_chunk_size(1000, 4) == 62

    def test_split_into_chunks(self):
        chunks = split_into_chunks(list(range(25)), "shared", 10)
        assert [c[2] for c in chunks] == [0, 10, 20]
        assert [len(c[1]) for c in chunks] == [10, 10, 5]
        assert all(c[0] == "shared" for c in chunks)


class TestProcessing:
    """Sequential and process-pool execution."""

    def test_sequential(self):
        assert run_sequential(_scaled_chunk, [1, 2, 3], 10) == [10, 20, 30]

    def test_parallel_keeps_item_order(self):
        items = list(range(100))
        results = run_chunked_parallel(_scaled_chunk, items, 3, max_workers=2, chunk_size=7)
        assert results == [3 * i for i in items]

    def test_parallel_with_no_items(self):
        assert run_chunked_parallel(_scaled_chunk, [], 3, max_workers=2) == []

    def test_small_workloads_stay_in_process(self):
        assert choose_processing_method(_scaled_chunk, [1, 2], 2, max_workers=4) == [2, 4]

    def test_single_worker_is_sequential(self):
        items = list(range(600))
        assert choose_processing_method(_scaled_chunk, items, 1, max_workers=1) == items
