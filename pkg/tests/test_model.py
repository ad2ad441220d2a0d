import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flaresim.core import ModelParams, Strategy
from flaresim import model


def params(K=4, S=1, P=4, delta=1.0, delta_c=1.0, tau=4.0, L=1024.0, C=8, B=1):
    return ModelParams(K=K, S=S, P=P, delta=delta, delta_c=delta_c, tau=tau,
                       L=L, C=C, B=B)


class TestSwitchBandwidth:
    def test_balanced_switch_runs_at_line_rate(self):
        assert model.switch_bandwidth(params(K=4, tau=4, delta=1)) == 1.0

    def test_single_core(self):
        assert model.switch_bandwidth(params(K=1, S=1, tau=1, delta=1)) == 1.0

    def test_compute_bound(self):
        p = params(K=512, S=1, tau=1024, delta=4)
        assert model.switch_bandwidth(p) == 0.25

    def test_rejects_bad_tau(self):
        with pytest.raises(ValueError):
            model.switch_bandwidth(params(tau=0))

    @given(tau=st.floats(1, 1e4), tau2=st.floats(1, 1e4), k=st.integers(1, 512))
    @settings(max_examples=60, deadline=None)
    def test_monotonic(self, tau, tau2, k):
        lo, hi = sorted((tau, tau2))
        assert model.switch_bandwidth(params(K=k, S=1, tau=hi)) <= \
            model.switch_bandwidth(params(K=k, S=1, tau=lo))
        assert model.switch_bandwidth(params(K=k, S=1, tau=lo)) <= \
            model.switch_bandwidth(params(K=k + 1, S=1, tau=lo))


class TestPerCoreInterarrival:
    @pytest.mark.parametrize("S,dc,K,d,expect", [
        (1, 1.0, 4, 1.0, 1.0),   # grouped bursts, one-core subsets
        (1, 4.0, 4, 1.0, 4.0),   # staggered bursts
        (4, 1.0, 4, 1.0, 4.0),   # capped by the switch-wide rate
    ])
    def test_reference_points(self, S, dc, K, d, expect):
        assert model.per_core_interarrival(params(K=K, S=S, delta=d, delta_c=dc)) == expect


class TestMaxQueue:
    def test_burst_queue(self):
        assert model.max_queue_length(params(P=4, S=1, delta_c=1, tau=4)) == 3.0

    def test_no_queue_when_spread(self):
        assert model.max_queue_length(params(P=4, S=1, delta_c=4, tau=4)) == 0.0

    def test_no_queue_global(self):
        assert model.max_queue_length(params(P=4, S=4, delta_c=1, tau=4)) == 0.0

    @given(
        s=st.integers(1, 8), p=st.integers(1, 32),
        dc=st.floats(1, 64), tau=st.floats(0.5, 64),
    )
    @settings(max_examples=120, deadline=None)
    def test_zero_iff_spread_covers_service(self, s, p, dc, tau):
        pm = params(K=64, S=s, P=p, delta_c=dc, tau=tau)
        q = model.max_queue_length(pm)
        dk = model.per_core_interarrival(pm)
        assert (q == 0) == (dk >= tau)
        assert q >= 0 and math.isfinite(q)


class TestInputBufferOccupancy:
    def test_grouped_burst(self):
        assert model.input_buffer_occupancy(params(K=4, P=4, S=1, delta_c=1, tau=4)) == 16.0

    def test_equals_cores_when_no_queue(self):
        assert model.input_buffer_occupancy(params(K=4, P=4, S=1, delta_c=4, tau=4)) == 4.0

    def test_large_switch(self):
        p = params(K=512, P=64, S=8, delta=1.0, delta_c=64.0, tau=1024.0)
        # delta_k = min(8*64, 512) = 512; Q = 8*(1 - 0.5) = 4
        assert model.input_buffer_occupancy(p) == 2560.0


class TestBlockLatency:
    def test_staggered(self):
        assert model.block_latency(params(P=4, S=1, delta_c=4, tau=4)) == 16.0

    def test_single_packet_block(self):
        # one-packet block with no queue: latency is one service time
        assert model.block_latency(params(P=1, S=1, delta_c=4, tau=4)) == 4.0

    def test_grouped(self):
        assert model.block_latency(params(P=4, S=1, delta_c=1, tau=4)) == 19.0


class TestWorkingMemory:
    def test_reference(self):
        assert model.working_memory(params(P=4), 1.0, 1.0, 16.0) == 4.0

    def test_zero_bandwidth(self):
        assert model.working_memory(params(P=4), 1.0, 0.0, 99.0) == 0.0

    def test_fractional(self):
        assert model.working_memory(params(P=4), 1.5, 0.5, 32.0) == 6.0


class TestServiceTimeSingle:
    def test_single_core_subset(self):
        assert model.service_time_single(params(S=1, L=1024)) == 1024

    def test_spread_arrivals(self):
        assert model.service_time_single(params(S=8, K=8, delta_c=2048, L=1024)) == 1024

    def test_contended(self):
        p = params(K=8, S=8, C=8, delta_c=64, L=1024)
        assert model.service_time_single(p) == 1024 * 7 / 2
        assert model.service_time_single(p, summation_form=True) == 1024 * 9 / 2

    def test_case_split_boundary(self):
        # contended strictly below delta_c = L, uncontended at and above
        at = params(K=8, S=8, C=3, delta_c=1024, L=1024)
        below = params(K=8, S=8, C=3, delta_c=1023, L=1024)
        assert model.service_time_single(at) == 1024
        assert model.service_time_single(below) == 1024  # (C-1)/2 == 1 for C=3
        below4 = params(K=8, S=8, C=4, delta_c=1023, L=1024)
        assert model.service_time_single(below4) == 1024 * 1.5


class TestServiceTimeMulti:
    def test_degenerate_single_buffer(self):
        p = params(K=8, S=8, C=8, delta_c=64, L=1024, B=1)
        assert model.service_time_multi(p) == model.service_time_single(p)

    def test_two_buffers_spread(self):
        p = params(K=8, S=8, C=8, P=4, delta_c=600, L=1024, B=2)
        assert model.service_time_multi(p) == 1024 + 1024 / 4

    def test_four_buffers_contended(self):
        p = params(K=8, S=8, C=8, P=8, delta_c=64, L=1024, B=4)
        assert model.service_time_multi(p) == 3584 + 3 * 1024 / 8


class TestServiceTimeTree:
    @pytest.mark.parametrize("P,tau,m", [
        (4, 768.0, 1.5),
        (2, 512.0, 1.0),
        (8, 896.0, 7 / 3),
    ])
    def test_reference(self, P, tau, m):
        got_tau, got_m = model.service_time_tree(params(P=P, L=1024))
        assert got_tau == pytest.approx(tau)
        assert got_m == pytest.approx(m)

    def test_degenerate_single_child(self):
        assert model.service_time_tree(params(P=1), dma_copy_cycles=64) == (64.0, 1.0)

    @given(p=st.integers(2, 512), L=st.floats(1, 4096))
    @settings(max_examples=80, deadline=None)
    def test_cheaper_than_full_aggregation(self, p, L):
        tau, m = model.service_time_tree(params(P=p, L=L))
        assert tau < L
        assert m >= 1


class TestSelectStrategy:
    KIB = 1024

    def test_large_uses_single(self):
        assert model.select_strategy(1024 * self.KIB, False) == Strategy.single()

    def test_small_uses_tree(self):
        assert model.select_strategy(64 * self.KIB, False) == Strategy.tree()

    def test_reproducible_always_tree(self):
        assert model.select_strategy(1024 * self.KIB, True) == Strategy.tree()

    def test_thresholds(self):
        assert model.select_strategy(512 * self.KIB + 1, False) == Strategy.single()
        assert model.select_strategy(512 * self.KIB, False) == Strategy.multi(4)
        assert model.select_strategy(256 * self.KIB + 1, False) == Strategy.multi(4)
        assert model.select_strategy(256 * self.KIB, False) == Strategy.multi(2)
        assert model.select_strategy(128 * self.KIB + 1, False) == Strategy.multi(2)
        assert model.select_strategy(128 * self.KIB, False) == Strategy.tree()
        assert model.select_strategy(0, False) == Strategy.tree()


class TestOutputsSane:
    @given(
        k=st.integers(1, 64), s=st.integers(1, 8), p=st.integers(1, 32),
        dc=st.floats(1, 128), tau=st.floats(0.5, 4096),
    )
    @settings(max_examples=120, deadline=None)
    def test_finite_nonnegative(self, k, s, p, dc, tau):
        s = min(s, k)
        pm = params(K=k, S=s, P=p, delta_c=dc, tau=tau)
        out = model.model_outputs(pm, buffers_per_block=1.5)
        for name in (
            "bandwidth_pkts_per_cycle", "delta_k", "max_queue",
            "packets_in_switch", "block_latency", "working_memory_buffers",
        ):
            v = getattr(out, name)
            assert math.isfinite(v) and v >= 0, name
        assert out.packets_in_switch >= k
