"""Closed-form models for switch bandwidth, queueing, working memory and
per-strategy service time, plus the data-size driven strategy selector.
"""

from __future__ import annotations

import math

from .core import ModelOutputs, ModelParams, Strategy

KIB = 1024


def switch_bandwidth(p: ModelParams) -> float:
    """Packets processed per cycle: min(K/tau, 1/delta)."""
    if p.tau <= 0 or p.delta <= 0:
        raise ValueError("tau and delta must be positive")
    return min(p.K / p.tau, 1.0 / p.delta)


def per_core_interarrival(p: ModelParams) -> float:
    """Burst interarrival at one core: min(S*delta_c, K*delta).

    Same-block packets land on a subset of S cores; in the long run a core
    can never receive packets faster than the switch-wide rate spread over
    all K cores.
    """
    return min(p.S * p.delta_c, p.K * p.delta)


def max_queue_length(p: ModelParams) -> float:
    """Peak per-core queue during a block burst: (P/S)(1 - delta_k/tau)."""
    if p.tau <= 0:
        raise ValueError("tau must be positive")
    dk = per_core_interarrival(p)
    return max(0.0, (p.P / p.S) * (1.0 - dk / p.tau))


def input_buffer_occupancy(p: ModelParams) -> float:
    """Peak packets resident in the switch: (Q+1)*K, one in service per core."""
    return (max_queue_length(p) + 1.0) * p.K


def block_latency(p: ModelParams) -> float:
    """Cycles from a block's first arrival to its last packet leaving a core:
    (P-1)*delta_c waiting for the block plus (Q+1)*tau for the last packet."""
    return (p.P - 1) * p.delta_c + (max_queue_length(p) + 1.0) * p.tau


def working_memory(p: ModelParams, buffers_per_block: float,
                   bandwidth: float, latency: float) -> float:
    """Aggregation buffers needed per allreduce, by Little's law:
    M * (bandwidth/P) * latency."""
    if p.P < 1:
        raise ValueError("P must be >= 1")
    return buffers_per_block * (bandwidth / p.P) * latency


def service_time_single(p: ModelParams, summation_form: bool = False) -> float:
    """Average core service time for single-buffer aggregation.

    Uncontended (S=1, or same-block packets spaced at least L apart) it is
    the plain critical-section cost L. Contended, the stated bound is
    L(C-1)/2; `summation_form` evaluates the underlying mean of {L..CL},
    L(C+1)/2, instead (the two disagree: see decisions ledger).
    """
    if p.L <= 0:
        raise ValueError("L must be positive")
    if p.S == 1 or p.delta_c >= p.L:
        return p.L
    return p.L * ((p.C + 1) if summation_form else (p.C - 1)) / 2.0


def service_time_multi(p: ModelParams, summation_form: bool = False) -> float:
    """Average core service time with B buffers per block.

    Contention drops as if packets arrived B times slower (delta_c -> B
    delta_c); the last handler folds the other B-1 buffers, amortized as
    (B-1)L/P over the block's packets.
    """
    spread = ModelParams(
        K=p.K, S=p.S, P=p.P, delta=p.delta, delta_c=p.delta_c * p.B,
        tau=p.tau, L=p.L, C=p.C, B=p.B,
    )
    return service_time_single(spread, summation_form) + (p.B - 1) * p.L / p.P


def service_time_tree(p: ModelParams, dma_copy_cycles: float = 64.0) -> tuple[float, float]:
    """Tree aggregation: (average cycles per packet, buffers per block).

    P-1 pair aggregations across log2(P) tree levels give tau = (P-1)L/P
    and on average M = (P-1)/log2(P) live buffers. P=1 degenerates to the
    bare copy cost with a single buffer.
    """
    if p.P == 1:
        return float(dma_copy_cycles), 1.0
    tau = (p.P - 1) * p.L / p.P
    m = (p.P - 1) / math.log2(p.P)
    return tau, m


def select_strategy(data_bytes: int, reproducible: bool) -> Strategy:
    """Pick the aggregation strategy for a reduction of `data_bytes`.

    Reproducible floating-point summation always uses the tree. Otherwise
    big reductions can stagger sends enough for one shared buffer, mid-size
    ones use multiple buffers, and small ones use the tree.
    """
    if data_bytes < 0:
        raise ValueError("data_bytes must be >= 0")
    if reproducible:
        return Strategy.tree()
    if data_bytes > 512 * KIB:
        return Strategy.single()
    if data_bytes > 256 * KIB:
        return Strategy.multi(4)
    if data_bytes > 128 * KIB:
        return Strategy.multi(2)
    return Strategy.tree()


def model_outputs(p: ModelParams, buffers_per_block: float = 1.0) -> ModelOutputs:
    """Evaluate every derived quantity for one parameter point."""
    bw = switch_bandwidth(p)
    dk = per_core_interarrival(p)
    q = max_queue_length(p)
    resident = input_buffer_occupancy(p)
    lat = block_latency(p)
    wm = working_memory(p, buffers_per_block, bw, lat)
    return ModelOutputs(
        bandwidth_pkts_per_cycle=bw,
        delta_k=dk,
        max_queue=q,
        packets_in_switch=resident,
        block_latency=lat,
        working_memory_buffers=wm,
        buffers_per_block=buffers_per_block,
    )


def strategy_service_time(p: ModelParams, strategy: Strategy,
                          dma_copy_cycles: float = 64.0,
                          summation_form: bool = False) -> tuple[float, float]:
    """(tau, buffers per block) for a concrete strategy at this point."""
    if strategy.kind == "single":
        return service_time_single(p, summation_form), 1.0
    if strategy.kind == "multi":
        scoped = ModelParams(K=p.K, S=p.S, P=p.P, delta=p.delta,
                             delta_c=p.delta_c, tau=p.tau, L=p.L, C=p.C,
                             B=strategy.buffers)
        return service_time_multi(scoped, summation_form), float(strategy.buffers)
    if strategy.kind == "tree":
        return service_time_tree(p, dma_copy_cycles)
    raise ValueError("auto strategy must be resolved via select_strategy first")
