"""Pair sampler law, knapsack hand traces, pack/unpack bijection, layout stats."""
from __future__ import annotations

import numpy as np
import pytest

from seqrank import packing as pk


class TestPairwiseSample:
    def test_two_items_forced(self):
        rng = np.random.default_rng(0)
        assert pk.pairwise_sample([1, 0], rng) == (0, 1)
        assert pk.pairwise_sample([0, 1], rng) == (1, 0)

    def test_middle_positive_uniform_negative(self):
        # labels [0,1,0]: a is always index 1, b uniform over {0, 2}
        rng = np.random.default_rng(42)
        counts = {0: 0, 2: 0}
        n = 100_000
        for _ in range(n):
            a, b = pk.pairwise_sample([0, 1, 0], rng)
            assert a == 1
            counts[b] += 1
        assert 0.49 <= counts[0] / n <= 0.51

    def test_all_purchased_degenerates_to_distinct_pair(self):
        rng = np.random.default_rng(7)
        seen = set()
        for _ in range(200):
            a, b = pk.pairwise_sample([1, 1], rng)
            assert a != b
            seen.add((a, b))
        assert seen == {(0, 1), (1, 0)}

    def test_uniform_over_admissible_set(self):
        # labels [1,0,1,0]: admissible = {0,2} x {1,3}, four pairs
        rng = np.random.default_rng(5)
        n = 40_000
        counts: dict[tuple[int, int], int] = {}
        for _ in range(n):
            p = pk.pairwise_sample([1, 0, 1, 0], rng)
            counts[p] = counts.get(p, 0) + 1
        assert set(counts) == {(0, 1), (0, 3), (2, 1), (2, 3)}
        for c in counts.values():
            assert 0.23 <= c / n <= 0.27

    def test_single_item_rejected(self):
        with pytest.raises(ValueError):
            pk.pairwise_sample([1], np.random.default_rng(0))

    def test_pair_label(self):
        assert pk.pair_label(1, 0) == 1.0
        assert pk.pair_label(0, 1) == 0.0
        assert pk.pair_label(1, 1) == 0.5
        with pytest.raises(ValueError):
            pk.pair_label(0, 0)


class TestGreedyKnapsack:
    def test_hand_trace_4_2_1(self):
        plan = pk.greedy_knapsack([4, 2, 1])
        assert plan.capacity == 4
        assert plan.packed_user_count == 2
        assert plan.assignments[0] == [(0, 0), (0, 1), (0, 2), (0, 3)]
        assert plan.assignments[1] == [(1, 0), (1, 1)]
        assert plan.assignments[2] == [(1, 2)]
        # run starts: row 0 at slot 0; row 1 at slots 0 and 2
        np.testing.assert_array_equal(plan.start,
                                      [[1, 0, 0, 0],
                                       [1, 0, 1, 0]])

    def test_hand_trace_2_1_1_boundary_fit(self):
        # the <= fit rule lets the second singleton close row 1 exactly
        plan = pk.greedy_knapsack([2, 1, 1])
        assert plan.packed_user_count == 2
        assert plan.assignments[1] == [(1, 0)]
        assert plan.assignments[2] == [(1, 1)]
        np.testing.assert_array_equal(plan.start, [[1, 0], [1, 1]])

    def test_equal_lengths_never_merge(self):
        plan = pk.greedy_knapsack([3, 3, 3])
        assert plan.packed_user_count == 3
        assert all(plan.row_fill[r] == 3 for r in range(3))

    def test_tie_break_by_original_index(self):
        plan = pk.greedy_knapsack([2, 3, 2, 3])
        # longest-first with index ties: placement order is users 1, 3, 0, 2,
        # and nothing merges because capacity is 3
        assert plan.assignments[1][0] == (0, 0)
        assert plan.assignments[3][0] == (1, 0)
        assert plan.assignments[0][0] == (2, 0)
        assert plan.assignments[2][0] == (3, 0)

    def test_first_fit_prefers_earliest_open_row(self):
        # [5,3,2,2,1]: cap 5; u0 fills row 0; u1 row 1 (fill 3); u2 row 1
        # (3+2=5 fits); u3 row 2; u4 row 0? 5+1>5, row 1 full, so row 2 (2+1)
        plan = pk.greedy_knapsack([5, 3, 2, 2, 1])
        assert plan.assignments[1][0] == (1, 0)
        assert plan.assignments[2][0] == (1, 3)
        assert plan.assignments[3][0] == (2, 0)
        assert plan.assignments[4][0] == (2, 2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pk.greedy_knapsack([])
        with pytest.raises(ValueError):
            pk.greedy_knapsack([2, 0])

    def test_bijection_and_invariants_random(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(1, 40))
            lengths = rng.integers(1, 101, size=n).tolist()
            plan = pk.greedy_knapsack(lengths)
            # bijection: every (u,t) maps to a unique slot and back
            seen = set()
            for u, row in enumerate(plan.assignments):
                assert len(row) == lengths[u]
                for t, rc in enumerate(row):
                    assert rc not in seen
                    seen.add(rc)
                    assert plan.inverse[rc] == (u, t)
            assert len(seen) == sum(lengths)
            # capacity respected, runs contiguous per user
            for u, row in enumerate(plan.assignments):
                rows = {r for r, _ in row}
                assert len(rows) == 1
                cols = [c for _, c in row]
                assert cols == list(range(cols[0], cols[0] + lengths[u]))
                assert cols[-1] < plan.capacity
            # one start marker per user, on the first slot of its run
            assert int(plan.start.sum()) == n
            for u, row in enumerate(plan.assignments):
                r, c = row[0]
                assert plan.start[r, c] == 1
            # every non-empty row begins with a marked run
            for r in range(plan.packed_user_count):
                assert plan.start[r, 0] == 1


class TestPackUnpack:
    def test_identity_single_user(self):
        plan = pk.greedy_knapsack([3])
        grid = pk.pack([["a", "b", "c"]], plan)
        assert grid.slots[0] == ["a", "b", "c"]
        assert pk.unpack(grid, plan) == [["a", "b", "c"]]

    def test_round_trip_random_payloads(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            lengths = rng.integers(1, 12, size=int(rng.integers(1, 15))).tolist()
            payload = [[(u, t, float(rng.standard_normal())) for t in range(l)]
                       for u, l in enumerate(lengths)]
            plan = pk.greedy_knapsack(lengths)
            assert pk.unpack(pk.pack(payload, plan), plan) == payload

    def test_occupied_count_and_dense(self):
        plan = pk.greedy_knapsack([4, 2, 1])
        grid = pk.pack([[1.0] * 4, [2.0] * 2, [3.0]], plan)
        assert grid.occupied() == 7
        dense = grid.dense()
        assert dense.shape == (2, 4)
        np.testing.assert_array_equal(dense, [[1, 1, 1, 1], [2, 2, 3, 0]])

    def test_length_mismatch_rejected(self):
        plan = pk.greedy_knapsack([2, 1])
        with pytest.raises(ValueError):
            pk.pack([[1, 2]], plan)
        with pytest.raises(ValueError):
            pk.pack([[1, 2], [3, 4]], plan)

    def test_unpack_detects_corrupt_plan(self):
        plan = pk.greedy_knapsack([2, 1])
        grid = pk.pack([[1, 2], [3]], plan)
        grid.mask[plan.assignments[1][0]] = False
        with pytest.raises(ValueError, match="masked slot"):
            pk.unpack(grid, plan)


class TestPackingStats:
    def test_hand_trace(self):
        st = pk.packing_stats([4, 2, 1])
        assert st.compression == 1.5
        assert st.padded_fraction_naive == pytest.approx(1 - 7 / 12)
        assert st.padded_fraction_packed == pytest.approx(1 - 7 / 8)

    def test_uniform_lengths_no_gain(self):
        st = pk.packing_stats([5, 5, 5, 5])
        assert st.compression == 1.0
        assert st.padded_fraction_packed == st.padded_fraction_naive == 0.0

    def test_padding_never_increases(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            lengths = rng.integers(1, 60, size=int(rng.integers(2, 30))).tolist()
            st = pk.packing_stats(lengths)
            assert st.padded_fraction_packed <= st.padded_fraction_naive + 1e-12
            assert st.compression >= 1.0
