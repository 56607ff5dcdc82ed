import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crds import (
    InvalidArgumentError,
    PoolItem,
    length_select,
    random_select,
    read_selection,
    round_robin_select,
    selection_overlap,
    write_selection,
)


def oracle_round_robin(scores, k):
    """Brute-force reference: rescan every unselected row per pick."""
    rows, cols = scores.shape
    selected = [False] * rows
    picks = []
    for rank in range(k):
        j = rank % cols
        best_i = None
        best = None
        for i in range(rows):
            if selected[i]:
                continue
            s = scores[i, j]
            if best is None or s > best:  # strict > keeps the lowest index on ties
                best, best_i = s, i
        selected[best_i] = True
        picks.append((rank, best_i, j, float(scores[best_i, j])))
    return picks


class TestRoundRobin:
    def test_worked_example(self):
        scores = np.array([[0.9, 0.1], [0.8, 0.95], [0.7, 0.2], [0.1, 0.3]], np.float32)
        result = round_robin_select(scores, 3)
        got = [(e.rank, e.pool_index, e.test_index) for e in result.entries]
        assert got == [(0, 0, 0), (1, 1, 1), (2, 2, 0)]
        want = oracle_round_robin(scores, 3)
        assert got == [(r, i, j) for r, i, j, _ in want]

    def test_single_column_is_top_k(self):
        scores = np.array([[0.1], [0.9], [0.5], [0.7]], np.float32)
        result = round_robin_select(scores, 3)
        assert result.pool_indices == [1, 3, 2]

    def test_all_equal_scores_tie_break_by_index(self):
        scores = np.full((5, 2), 0.5, np.float32)
        result = round_robin_select(scores, 3)
        assert result.pool_indices == [0, 1, 2]

    def test_budget_validation(self):
        scores = np.zeros((3, 2), np.float32)
        with pytest.raises(InvalidArgumentError):
            round_robin_select(scores, 0)
        with pytest.raises(InvalidArgumentError):
            round_robin_select(scores, 4)

    def test_matches_oracle_on_random_instances(self):
        rng = np.random.default_rng(123)
        for _ in range(60):
            rows = int(rng.integers(1, 40))
            cols = int(rng.integers(1, 6))
            k = int(rng.integers(1, rows + 1))
            # quantized scores force plenty of ties
            scores = (rng.integers(0, 5, (rows, cols)) / 4.0).astype(np.float32)
            result = round_robin_select(scores, k)
            want = oracle_round_robin(scores, k)
            got = [(e.rank, e.pool_index, e.test_index, e.score) for e in result.entries]
            assert got == want

    @given(st.data())
    @settings(max_examples=60, deadline=None)
    def test_oracle_property(self, data):
        rows = data.draw(st.integers(1, 25))
        cols = data.draw(st.integers(1, 4))
        k = data.draw(st.integers(1, rows))
        flat = data.draw(st.lists(
            st.floats(-1, 1, width=32, allow_nan=False), min_size=rows * cols,
            max_size=rows * cols))
        scores = np.array(flat, np.float32).reshape(rows, cols)
        result = round_robin_select(scores, k)
        want = oracle_round_robin(scores, k)
        assert [(e.rank, e.pool_index, e.test_index) for e in result.entries] == [
            (r, i, j) for r, i, j, _ in want
        ]
        counts = result.per_test_counts().values()
        assert max(counts) - min(counts) <= 1

    def test_monotone_transform_leaves_picks_unchanged(self):
        rng = np.random.default_rng(7)
        scores = rng.standard_normal((30, 3)).astype(np.float32)
        base = round_robin_select(scores, 20).pool_indices
        warped = scores.astype(np.float64) ** 3 + scores.astype(np.float64)
        assert round_robin_select(warped, 20).pool_indices == base


class TestRandomSelect:
    def test_exhaustive(self):
        result = random_select(10, 10, seed=5)
        assert sorted(result.pool_indices) == list(range(10))

    def test_deterministic(self):
        a = random_select(100, 10, seed=3)
        b = random_select(100, 10, seed=3)
        c = random_select(100, 10, seed=4)
        assert a.pool_indices == b.pool_indices
        assert a.pool_indices != c.pool_indices

    def test_no_duplicates_at_scale(self):
        result = random_select(1_000_000, 70_000, seed=1)
        assert len(set(result.pool_indices)) == 70_000
        assert all(e.test_index is None for e in result.entries)

    def test_oversized_budget_rejected(self):
        with pytest.raises(InvalidArgumentError):
            random_select(5, 6, seed=0)


class TestLengthSelect:
    def test_sort_order(self):
        pool = [PoolItem(0, "aaaaa", 5), PoolItem(1, "b" * 10, 10), PoolItem(2, "cc", 2)]
        result = length_select(pool, 2)
        assert result.pool_indices == [1, 0]
        assert result.entries[0].score == 10.0

    def test_full_budget_sorts_everything(self):
        result = length_select([3, 9, 1, 9], 4)
        assert result.pool_indices == [1, 3, 0, 2]

    def test_equal_lengths_tie_break(self):
        result = length_select([7, 7, 7], 2)
        assert result.pool_indices == [0, 1]

    def test_oversized_budget_rejected(self):
        with pytest.raises(InvalidArgumentError):
            length_select([1, 2], 3)


class TestOverlap:
    def test_identical(self):
        a = random_select(20, 5, seed=1)
        report = selection_overlap(a, a)
        assert report.jaccard == 1.0
        assert report.intersection_size == 5

    def test_disjoint(self):
        scores = np.eye(6, dtype=np.float32)
        a = round_robin_select(scores[:, :3], 3)
        b = random_select(6, 3, seed=2)
        while set(b.pool_indices) & set(a.pool_indices):
            b = random_select(6, 3, seed=b.seeds["selection"] + 1)
        assert selection_overlap(a, b).jaccard == 0.0

    def test_one_shared_of_two(self):
        scores = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]], np.float32)
        a = round_robin_select(scores, 2)  # picks 0 and 1
        b = round_robin_select(np.array([[0.0, 0.1], [0.9, 0.0], [1.0, 0.9]], np.float32), 2)
        inter = set(a.pool_indices) & set(b.pool_indices)
        union = set(a.pool_indices) | set(b.pool_indices)
        assert selection_overlap(a, b).jaccard == len(inter) / len(union)
        assert selection_overlap(a, b).jaccard == pytest.approx(1 / 3)

    def test_mismatched_pools_rejected(self):
        with pytest.raises(InvalidArgumentError):
            selection_overlap(random_select(10, 2, seed=0), random_select(11, 2, seed=0))

    def test_per_test_agreement(self):
        scores = np.array([[0.9, 0.1], [0.1, 0.9], [0.5, 0.5], [0.4, 0.2]], np.float32)
        a = round_robin_select(scores, 4)
        report = selection_overlap(a, a)
        assert report.per_test == {0: 1.0, 1: 1.0}


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        scores = np.random.default_rng(0).standard_normal((12, 3)).astype(np.float32)
        result = round_robin_select(scores, 7)
        result.seeds["encoder"] = 42
        path = tmp_path / "sel.jsonl"
        write_selection(path, result)
        loaded = read_selection(path)
        assert loaded.method == "round_robin"
        assert loaded.k == 7
        assert loaded.pool_size == 12
        assert loaded.seeds == {"encoder": 42}
        assert [(e.rank, e.pool_index, e.test_index, e.score) for e in loaded.entries] == [
            (e.rank, e.pool_index, e.test_index, e.score) for e in result.entries
        ]

    def test_header_line_is_first(self, tmp_path):
        import json

        result = random_select(5, 2, seed=9)
        path = tmp_path / "sel.jsonl"
        write_selection(path, result)
        first = json.loads(path.read_text().splitlines()[0])
        assert first["type"] == "summary"
        assert first["method"] == "random"
