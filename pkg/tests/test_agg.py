import itertools
import random

import numpy as np
import pytest

from flaresim.agg import (
    OP_MAX,
    OP_MIN,
    OP_SUM,
    BlockState,
    CostModel,
    ProtocolError,
    ReduceOp,
    contention_cost,
    on_packet,
    on_packet_multi,
    on_packet_single,
    on_packet_tree,
    simulate_strategy,
)
from flaresim.core import ElementType, ReductionPacket, Strategy

FLAT = CostModel(cycles_per_element=4.0, dma_copy_cycles=64.0, buffer_mgmt_cycles=0.0)


def pkt(port, values, block=0, elem=np.float32):
    return ReductionPacket(allreduce_id=0, block_id=block, src_port=port,
                           values=np.asarray(values, dtype=elem))


def state(P, strategy, elem=ElementType.FP32):
    return BlockState(block_id=0, num_children=P, elem=elem, strategy=strategy)


def slot_tree_fold(values_by_slot, combine):
    """Independent oracle for the fixed merge tree: pair slots left to
    right per level, promote an odd trailing slot, fold left into right."""
    level = list(values_by_slot)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(combine(level[i], level[i + 1]))
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


class TestSingleBuffer:
    def test_three_hosts_sum(self):
        st = state(3, Strategy.single())
        emitted = None
        for p in range(3):
            out = on_packet_single(st, pkt(p, np.ones(256)), OP_SUM, FLAT, 0.0)
            emitted = out.emitted or emitted
        assert emitted is not None
        assert np.array_equal(emitted.values, np.full(256, 3.0, np.float32))

    def test_duplicate_is_ignored(self):
        st = state(3, Strategy.single())
        on_packet_single(st, pkt(0, np.ones(4)), OP_SUM, FLAT, 0.0)
        before = st.buffers[0].values.copy()
        out = on_packet_single(st, pkt(0, np.full(4, 7.0)), OP_SUM, FLAT, 10.0)
        assert out.emitted is None and out.cycles_spent == 0
        assert np.array_equal(st.buffers[0].values, before)

    def test_single_child_identity(self):
        st = state(1, Strategy.single())
        data = np.arange(8, dtype=np.float32)
        out = on_packet_single(st, pkt(0, data), OP_SUM, FLAT, 0.0)
        assert out.emitted is not None
        assert np.array_equal(out.emitted.values, data)

    def test_mismatched_length_rejected(self):
        st = state(2, Strategy.single())
        on_packet_single(st, pkt(0, np.ones(8)), OP_SUM, FLAT, 0.0)
        with pytest.raises(ProtocolError, match="elements"):
            on_packet_single(st, pkt(1, np.ones(9)), OP_SUM, FLAT, 0.0)

    def test_critical_section_waits(self):
        # three simultaneous handlers on one buffer serialize at L=1024 each
        st = state(3, Strategy.single())
        waits = [
            on_packet_single(st, pkt(p, np.ones(256)), OP_SUM, FLAT, 0.0).cycles_waiting
            for p in range(3)
        ]
        assert waits == [0.0, 1024.0, 2048.0]


class TestMultiBuffer:
    def test_four_packets_two_buffers(self):
        st = state(4, Strategy.multi(2))
        emitted = None
        for p in range(4):
            out = on_packet_multi(st, pkt(p, np.ones(256)), OP_SUM, FLAT, 0.0)
            emitted = out.emitted or emitted
        assert np.array_equal(emitted.values, np.full(256, 4.0, np.float32))
        assert st.peak_live_buffers <= 2

    def test_b1_identical_to_single(self):
        rng = np.random.default_rng(3)
        for trial in range(10):
            data = [rng.normal(size=16).astype(np.float32) for _ in range(5)]
            order = rng.permutation(5)
            s1, s2 = state(5, Strategy.single()), state(5, Strategy.multi(1))
            for t, p in enumerate(order):
                o1 = on_packet_single(s1, pkt(p, data[p]), OP_SUM, FLAT, float(t))
                o2 = on_packet_multi(s2, pkt(p, data[p]), OP_SUM, FLAT, float(t))
                assert o1.cycles_spent == o2.cycles_spent
                assert (o1.emitted is None) == (o2.emitted is None)
                if o1.emitted is not None:
                    assert o1.emitted.values.tobytes() == o2.emitted.values.tobytes()

    def test_two_buffers_two_packets(self):
        st = state(2, Strategy.multi(2))
        on_packet_multi(st, pkt(0, [1.0, 2.0]), OP_SUM, FLAT, 0.0)
        out = on_packet_multi(st, pkt(1, [10.0, 20.0]), OP_SUM, FLAT, 0.0)
        assert np.array_equal(out.emitted.values, np.array([11.0, 22.0], np.float32))

    def test_buffers_freed_matches_allocated(self):
        st = state(6, Strategy.multi(3))
        freed = sum(
            on_packet_multi(st, pkt(p, np.ones(8)), OP_SUM, FLAT, float(p)).buffers_freed
            for p in range(6)
        )
        assert freed == st.buffers_allocated


class TestTree:
    def test_all_permutations_bit_identical(self):
        vals = [np.full(4, v, np.float32) for v in (1e20, 1.0, -1e20, 1.0)]
        results = set()
        for perm in itertools.permutations(range(4)):
            st = state(4, Strategy.tree())
            emitted = None
            for t, p in enumerate(perm):
                out = on_packet_tree(st, pkt(p, vals[p]), OP_SUM, FLAT, float(t))
                emitted = out.emitted or emitted
            results.add(emitted.values.tobytes())
        assert len(results) == 1
        oracle = slot_tree_fold(vals, lambda a, b: a + b)
        assert results.pop() == oracle.astype(np.float32).tobytes()

    def test_single_buffer_is_order_dependent(self):
        # the non-reproducibility the tree exists to avoid
        vals = [np.full(4, v, np.float32) for v in (1e20, 1.0, -1e20, 1.0)]
        results = set()
        for perm in itertools.permutations(range(4)):
            st = state(4, Strategy.single())
            emitted = None
            for t, p in enumerate(perm):
                out = on_packet_single(st, pkt(p, vals[p]), OP_SUM, FLAT, float(t))
                emitted = out.emitted or emitted
            results.add(emitted.values.tobytes())
        assert len(results) >= 2

    def test_pair_of_two(self):
        st = state(2, Strategy.tree())
        on_packet_tree(st, pkt(0, [1.5]), OP_SUM, FLAT, 0.0)
        out = on_packet_tree(st, pkt(1, [2.25]), OP_SUM, FLAT, 1.0)
        assert out.emitted.values[0] == np.float32(3.75)

    def test_odd_port_count_promotes_trailing_slot(self):
        vals = [np.array([v], np.float32) for v in (1.0, 2.0, 4.0)]
        for perm in itertools.permutations(range(3)):
            st = state(3, Strategy.tree())
            emitted = None
            for t, p in enumerate(perm):
                out = on_packet_tree(st, pkt(p, vals[p]), OP_SUM, FLAT, float(t))
                emitted = out.emitted or emitted
            oracle = slot_tree_fold(vals, lambda a, b: a + b)
            assert emitted.values.tobytes() == oracle.tobytes()

    def test_peak_buffers_bounded_by_ports(self):
        for P in (2, 3, 5, 8, 13):
            st = state(P, Strategy.tree())
            for p in range(P):
                on_packet_tree(st, pkt(p, np.ones(4)), OP_SUM, FLAT, float(p))
            assert st.peak_live_buffers <= P
            assert st.buffers_allocated == P


class TestOperatorCorrectness:
    @pytest.mark.parametrize("strategy", [
        Strategy.single(), Strategy.multi(2), Strategy.multi(4), Strategy.tree(),
    ])
    @pytest.mark.parametrize("op,ref", [
        (OP_SUM, lambda a: a.sum(axis=0)),
        (OP_MIN, lambda a: a.min(axis=0)),
        (OP_MAX, lambda a: a.max(axis=0)),
    ])
    def test_integer_exactness(self, strategy, op, ref):
        rng = np.random.default_rng(11)
        for P in range(1, 17):
            data = rng.integers(-1000, 1000, size=(P, 32)).astype(np.int32)
            st = state(P, strategy, elem=ElementType.INT32)
            emitted = None
            order = rng.permutation(P)
            for t, p in enumerate(order):
                out = on_packet(st, pkt(p, data[p], elem=np.int32), op, FLAT, float(t))
                emitted = out.emitted or emitted
            assert emitted is not None, (strategy, P)
            assert np.array_equal(emitted.values, ref(data).astype(np.int32))

    def test_custom_operator_runs_everywhere(self):
        xor = ReduceOp("xor", np.bitwise_xor)
        rng = np.random.default_rng(5)
        data = rng.integers(0, 2**30, size=(6, 16)).astype(np.int32)
        expect = np.bitwise_xor.reduce(data, axis=0)
        for strategy in (Strategy.single(), Strategy.multi(3), Strategy.tree()):
            st = state(6, strategy, elem=ElementType.INT32)
            emitted = None
            for t, p in enumerate(rng.permutation(6)):
                out = on_packet(st, pkt(p, data[p], elem=np.int32), xor, FLAT, float(t))
                emitted = out.emitted or emitted
            assert np.array_equal(emitted.values, expect)

    def test_fp16_storage_rounding(self):
        st = state(2, Strategy.single(), elem=ElementType.FP16)
        a = np.array([1.0, 2048.0], np.float16)
        b = np.array([1.0, 1.0], np.float16)
        on_packet_single(st, pkt(0, a, elem=np.float16), OP_SUM, FLAT, 0.0)
        out = on_packet_single(st, pkt(1, b, elem=np.float16), OP_SUM, FLAT, 0.0)
        expect = (a.astype(np.float32) + b.astype(np.float32)).astype(np.float16)
        assert out.emitted.values.tobytes() == expect.tobytes()


class TestRetransmission:
    @pytest.mark.parametrize("strategy", [
        Strategy.single(), Strategy.multi(2), Strategy.tree(),
    ])
    def test_prefix_replay_changes_nothing(self, strategy):
        rng = random.Random(7)
        nrng = np.random.default_rng(7)
        for _ in range(25):
            P = rng.randint(2, 8)
            data = nrng.integers(-50, 50, size=(P, 8)).astype(np.int32)
            order = list(range(P))
            rng.shuffle(order)
            cut = rng.randint(1, P)
            replay = order[:cut] + order + order[:cut]

            def run(seq):
                st = state(P, strategy, elem=ElementType.INT32)
                emitted = None
                for t, p in enumerate(seq):
                    out = on_packet(st, pkt(p, data[p], elem=np.int32),
                                    OP_SUM, FLAT, float(t))
                    if out.emitted is not None:
                        emitted = out.emitted
                return emitted.values.tobytes()

            assert run(replay) == run(order)


class TestContentionCost:
    def test_alone(self):
        assert contention_cost(1, 1024.0) == [0.0]

    def test_three_handlers(self):
        assert contention_cost(3, 1024.0) == [0.0, 1024.0, 2048.0]

    def test_mean_total_matches_summation_accounting(self):
        # oracle: mean of {L, 2L, ..., CL}
        L, C = 1024.0, 8
        waits = contention_cost(C, L)
        mean_total = sum(w + L for w in waits) / C
        assert mean_total == sum(i * L for i in range(1, C + 1)) / C


class TestStrategySimulation:
    def burst(self, P, delta_c=0.0, elements=256):
        return [
            (i * delta_c, pkt(i, np.ones(elements)))
            for i in range(P)
        ]

    def test_contended_burst_matches_contention_cost(self):
        # C simultaneous handlers on one cluster: waits 0, L, ..., (C-1)L
        res = simulate_strategy(
            self.burst(8), Strategy.single(), num_children=8,
            cores=8, cores_per_cluster=8, subset_size=8, cost=FLAT)
        L = 1024.0
        assert res.mean_wait == (8 - 1) * L / 2
        assert res.mean_service == (8 + 1) * L / 2

    def test_spread_burst_never_waits(self):
        res = simulate_strategy(
            self.burst(8, delta_c=2048.0), Strategy.single(), num_children=8,
            cores=8, cores_per_cluster=8, subset_size=8, cost=FLAT)
        assert res.mean_wait == 0.0
        assert res.mean_service == 1024.0

    def test_deterministic(self):
        arrivals = self.burst(8, delta_c=10.0)
        a = simulate_strategy(arrivals, Strategy.tree(), 8, 8, 8, 8, cost=FLAT)
        b = simulate_strategy(arrivals, Strategy.tree(), 8, 8, 8, 8, cost=FLAT)
        assert a.makespan == b.makespan
        assert [o.cycles_spent for o in a.outcomes] == [o.cycles_spent for o in b.outcomes]

    def test_conservation(self):
        res = simulate_strategy(self.burst(6), Strategy.multi(2), 6, 8, 8, 8, cost=FLAT)
        assert res.packets == 6
        assert len(res.emitted) == 1
