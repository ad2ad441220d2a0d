"""Dense aggregation engines: single shared buffer, multiple buffers, and
fixed-shape tree aggregation, with children-bitmap retransmission dedup and
critical-section cost accounting, plus a cluster-level strategy simulator.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ElementType, ReductionPacket, Strategy


class ProtocolError(Exception):
    """Packet contradicts the block's negotiated shape or counters."""


class ConfigurationError(Exception):
    """Engine state was assembled inconsistently (e.g. slot collisions)."""


@dataclass(frozen=True)
class ReduceOp:
    """Elementwise associative reduction operator over numpy arrays."""

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def combine(self, acc: np.ndarray, new: np.ndarray, elem: ElementType) -> np.ndarray:
        # fp16 payloads compute in fp32 and round back to storage precision.
        if elem is ElementType.FP16:
            out = self.fn(acc.astype(np.float32), new.astype(np.float32))
            return out.astype(np.float16)
        return self.fn(acc, new)


OP_SUM = ReduceOp("sum", np.add)
OP_MIN = ReduceOp("min", np.minimum)
OP_MAX = ReduceOp("max", np.maximum)


@dataclass(frozen=True)
class CostModel:
    """Cycle costs charged by the engines.

    Single/multi handlers move data through the core, so depositing a first
    packet costs as much as aggregating one; only the tree engine copies via
    the DMA engine. Multi and tree handlers additionally pay a small
    bookkeeping cost for managing more than one buffer per block.
    """

    cycles_per_element: float = 4.0
    dma_copy_cycles: float = 64.0
    buffer_mgmt_cycles: float = 8.0

    def aggregate_cycles(self, elements: int) -> float:
        return elements * self.cycles_per_element

    @classmethod
    def for_elem(cls, elem: ElementType, cycles_per_fp32_add: float = 4.0,
                 dma_copy_cycles: float = 64.0,
                 buffer_mgmt_cycles: float = 8.0) -> "CostModel":
        scale = cycles_per_fp32_add / 4.0
        return cls(cycles_per_element=elem.cycles_per_element * scale,
                   dma_copy_cycles=dma_copy_cycles,
                   buffer_mgmt_cycles=buffer_mgmt_cycles)


@dataclass
class HandlerOutcome:
    """What one packet handler did: total busy cycles, the part of them
    spent waiting to enter a critical section, the aggregated packet if the
    block completed, and how many buffers were released."""

    cycles_spent: float = 0.0
    cycles_waiting: float = 0.0
    emitted: Optional[ReductionPacket] = None
    buffers_freed: int = 0

    def __post_init__(self):
        if not self.cycles_spent >= self.cycles_waiting >= 0:
            raise ValueError("need cycles_spent >= cycles_waiting >= 0")


@dataclass
class _Buffer:
    values: Optional[np.ndarray] = None
    status: str = "empty"  # empty | filling | ready
    free_at: float = 0.0


@dataclass
class BlockState:
    """Aggregation state of one reduction block on one switch."""

    block_id: int
    num_children: int
    elem: ElementType
    strategy: Strategy
    allreduce_id: int = 0
    children_bitmap: int = 0
    completed: bool = False
    buffers: list = field(default_factory=list)
    # sparse bookkeeping, managed by the sparse module
    shard_seen: dict = field(default_factory=dict)
    shard_announced: dict = field(default_factory=dict)
    # tree bookkeeping
    tree_ready: set = field(default_factory=set)
    tree_buffer_of: dict = field(default_factory=dict)
    buffers_allocated: int = 0
    peak_live_buffers: int = 0

    def __post_init__(self):
        if not self.buffers:
            n = {"single": 1, "multi": self.strategy.buffers,
                 "tree": self.num_children}.get(self.strategy.kind)
            if n is None:
                raise ConfigurationError("block state needs a resolved strategy")
            self.buffers = [_Buffer() for _ in range(n)]
        self._level_sizes = _tree_level_sizes(self.num_children)

    def port_seen(self, port: int) -> bool:
        return bool(self.children_bitmap >> port & 1)

    def mark_port(self, port: int):
        if not 0 <= port < self.num_children:
            raise ProtocolError(
                f"port {port} outside the {self.num_children} expected children")
        self.children_bitmap |= 1 << port
        if self.children_bitmap == (1 << self.num_children) - 1:
            self.completed = True

    def live_buffers(self) -> int:
        return sum(1 for b in self.buffers if b.status != "empty")

    def _note_alloc(self):
        self.buffers_allocated += 1
        self.peak_live_buffers = max(self.peak_live_buffers, self.live_buffers())


def _tree_level_sizes(p: int) -> list[int]:
    sizes = [p]
    while sizes[-1] > 1:
        sizes.append(-(-sizes[-1] // 2))
    return sizes


def _check_shape(buf: _Buffer, pkt: ReductionPacket):
    if buf.values is not None and len(buf.values) != pkt.num_elements:
        raise ProtocolError(
            f"packet carries {pkt.num_elements} elements, buffer holds "
            f"{len(buf.values)}")


def _emit(state: BlockState, values: np.ndarray) -> ReductionPacket:
    return ReductionPacket(
        allreduce_id=state.allreduce_id,
        block_id=state.block_id,
        src_port=0,
        values=values,
    )


def on_packet_single(state: BlockState, pkt: ReductionPacket, op: ReduceOp,
                     cost: CostModel = CostModel(),
                     start_time: float = 0.0) -> HandlerOutcome:
    """Accumulate every packet of the block into one shared buffer.

    The buffer is a critical section: a handler arriving while another holds
    it waits (actively, on its core) for the release. Retransmitted packets
    are recognized by the children bitmap and ignored.
    """
    if pkt.is_sparse:
        raise ProtocolError("dense engine got a sparse payload")
    if pkt.block_id != state.block_id:
        raise ProtocolError(f"packet for block {pkt.block_id} routed to "
                            f"block {state.block_id}")
    if state.port_seen(pkt.src_port):
        return HandlerOutcome()

    buf = state.buffers[0]
    _check_shape(buf, pkt)
    wait = max(0.0, buf.free_at - start_time)
    enter = start_time + wait
    if buf.values is None:
        buf.values = pkt.values.copy()
        buf.status = "filling"
        work = cost.aggregate_cycles(pkt.num_elements)
        state._note_alloc()
    else:
        buf.values = op.combine(buf.values, pkt.values, state.elem)
        work = cost.aggregate_cycles(pkt.num_elements)
    buf.free_at = enter + work
    state.mark_port(pkt.src_port)

    emitted = None
    freed = 0
    if state.completed:
        emitted = _emit(state, buf.values)
        buf.values, buf.status = None, "empty"
        freed = 1
    return HandlerOutcome(cycles_spent=wait + work, cycles_waiting=wait,
                          emitted=emitted, buffers_freed=freed)


def on_packet_multi(state: BlockState, pkt: ReductionPacket, op: ReduceOp,
                    cost: CostModel = CostModel(),
                    start_time: float = 0.0) -> HandlerOutcome:
    """Aggregate into whichever of the block's B buffers is free.

    The handler takes the lowest-index buffer not currently held; if all are
    held it waits for the earliest release. The packet completing the
    children bitmap folds the remaining buffers into its own (ascending
    index) and emits, paying (B-1) extra aggregations.
    """
    if pkt.is_sparse:
        raise ProtocolError("dense engine got a sparse payload")
    if pkt.block_id != state.block_id:
        raise ProtocolError(f"packet for block {pkt.block_id} routed to "
                            f"block {state.block_id}")
    if len(state.buffers) == 1:
        # degenerate multi-buffer: exactly the single-buffer engine
        return on_packet_single(state, pkt, op, cost, start_time)
    if state.port_seen(pkt.src_port):
        return HandlerOutcome()

    free_now = [i for i, b in enumerate(state.buffers) if b.free_at <= start_time]
    idx = free_now[0] if free_now else min(
        range(len(state.buffers)), key=lambda i: (state.buffers[i].free_at, i))
    buf = state.buffers[idx]
    _check_shape(buf, pkt)
    wait = max(0.0, buf.free_at - start_time)
    cursor = start_time + wait + cost.buffer_mgmt_cycles
    if buf.values is None:
        buf.values = pkt.values.copy()
        buf.status = "filling"
        cursor += cost.aggregate_cycles(pkt.num_elements)
        state._note_alloc()
    else:
        buf.values = op.combine(buf.values, pkt.values, state.elem)
        cursor += cost.aggregate_cycles(pkt.num_elements)
    buf.free_at = cursor
    state.mark_port(pkt.src_port)

    emitted = None
    freed = 0
    if state.completed:
        for j, other in enumerate(state.buffers):
            if j == idx or other.values is None:
                continue
            if other.free_at > cursor:
                wait += other.free_at - cursor
                cursor = other.free_at
            buf.values = op.combine(buf.values, other.values, state.elem)
            cursor += cost.aggregate_cycles(len(other.values))
            other.values, other.status = None, "empty"
            freed += 1
        emitted = _emit(state, buf.values)
        buf.values, buf.status = None, "empty"
        buf.free_at = cursor
        freed += 1
    return HandlerOutcome(cycles_spent=cursor - start_time, cycles_waiting=wait,
                          emitted=emitted, buffers_freed=freed)


def on_packet_tree(state: BlockState, pkt: ReductionPacket, op: ReduceOp,
                   cost: CostModel = CostModel(),
                   start_time: float = 0.0) -> HandlerOutcome:
    """Copy the packet to its port's fixed slot and climb the merge tree.

    Slots pair left-to-right per level (an odd trailing slot is promoted
    intact); each merge folds the lower-index buffer into the higher-index
    one and releases the former. Merge order is a function of the port
    layout only, never of arrival order, so floating-point summation is
    reproducible. Handlers never wait: a merge happens only when both inputs
    are already present.
    """
    if pkt.is_sparse:
        raise ProtocolError("dense engine got a sparse payload")
    if pkt.block_id != state.block_id:
        raise ProtocolError(f"packet for block {pkt.block_id} routed to "
                            f"block {state.block_id}")
    if state.port_seen(pkt.src_port):
        return HandlerOutcome()

    slot = pkt.src_port
    node = (0, slot)
    if node in state.tree_ready:
        raise ConfigurationError(f"two ports mapped to slot {slot}")
    buf = state.buffers[slot]
    _check_shape(buf, pkt)
    buf.values = pkt.values.copy()
    buf.status = "ready"
    state._note_alloc()
    work = cost.dma_copy_cycles + cost.buffer_mgmt_cycles
    state.tree_ready.add(node)
    state.tree_buffer_of[node] = slot
    state.mark_port(pkt.src_port)

    freed = 0
    sizes = state._level_sizes
    level, pos = node
    while level < len(sizes) - 1:
        size = sizes[level]
        sibling = pos + 1 if pos % 2 == 0 else pos - 1
        parent = (level + 1, pos // 2)
        if sibling >= size:
            # odd trailing slot: promoted unchanged to the next level
            state.tree_buffer_of[parent] = state.tree_buffer_of[(level, pos)]
            state.tree_ready.add(parent)
            level, pos = parent
            continue
        if (level, sibling) not in state.tree_ready:
            break
        left = state.tree_buffer_of[(level, min(pos, sibling))]
        right = state.tree_buffer_of[(level, max(pos, sibling))]
        lb, rb = state.buffers[left], state.buffers[right]
        rb.values = op.combine(lb.values, rb.values, state.elem)
        work += cost.aggregate_cycles(len(rb.values))
        lb.values, lb.status = None, "empty"
        freed += 1
        state.tree_buffer_of[parent] = right
        state.tree_ready.add(parent)
        level, pos = parent

    emitted = None
    top = (len(sizes) - 1, 0)
    if top in state.tree_ready and not getattr(state, "_tree_emitted", False):
        root_buf = state.buffers[state.tree_buffer_of[top]]
        emitted = _emit(state, root_buf.values)
        root_buf.values, root_buf.status = None, "empty"
        freed += 1
        state._tree_emitted = True
    return HandlerOutcome(cycles_spent=work, cycles_waiting=0.0,
                          emitted=emitted, buffers_freed=freed)


def on_packet(state: BlockState, pkt: ReductionPacket, op: ReduceOp,
              cost: CostModel = CostModel(),
              start_time: float = 0.0) -> HandlerOutcome:
    """Dispatch to the engine matching the block's strategy."""
    handler = {"single": on_packet_single, "multi": on_packet_multi,
               "tree": on_packet_tree}[state.strategy.kind]
    return handler(state, pkt, op, cost, start_time)


def contention_cost(concurrent: int, L: float) -> list[float]:
    """Waiting cycles of each of `concurrent` handlers racing for one
    buffer: the i-th to enter waits (i-1)*L."""
    if concurrent < 1:
        raise ValueError("concurrent must be >= 1")
    return [i * L for i in range(concurrent)]


# ---------------------------------------------------------------------------
# Cluster-level strategy simulation
# ---------------------------------------------------------------------------

@dataclass
class AggSimResult:
    outcomes: list
    emitted: list
    makespan: float
    packets: int
    bandwidth_pkts_per_cycle: float
    mean_service: float
    mean_wait: float
    peak_live_buffers: int


def simulate_strategy(
    arrivals: list[tuple[float, ReductionPacket]],
    strategy: Strategy,
    num_children: int,
    cores: int,
    cores_per_cluster: int,
    subset_size: int,
    op: ReduceOp = OP_SUM,
    cost: CostModel = CostModel(),
    elem: ElementType = ElementType.FP32,
) -> AggSimResult:
    """Run one aggregation strategy on a time-ordered packet arrival trace.

    Blocks map to core subsets hierarchically (block id modulo the subset
    count); within a subset packets go FCFS to the earliest-free core.
    Handler durations, including critical-section waits, come from the
    engines, so the achieved bandwidth reflects buffer contention.
    """
    if subset_size < 1 or cores % subset_size:
        raise ValueError("subset size must divide the core count")
    if subset_size > cores_per_cluster or cores_per_cluster % subset_size:
        raise ValueError("subsets must not span cluster boundaries")
    n_sub = cores // subset_size
    core_free = [0.0] * cores
    queues: list[list] = [[] for _ in range(n_sub)]
    states: dict[int, BlockState] = {}
    outcomes: list[HandlerOutcome] = []
    emitted: list[ReductionPacket] = []
    makespan = 0.0

    events: list = []  # (time, priority, seq) with end events before arrivals
    seq = 0
    for t, pkt in arrivals:
        heapq.heappush(events, (t, 1, seq, ("arrival", pkt)))
        seq += 1

    def start_handler(t: float, core: int, pkt: ReductionPacket):
        nonlocal seq, makespan
        st = states.get(pkt.block_id)
        if st is None:
            st = states[pkt.block_id] = BlockState(
                block_id=pkt.block_id, num_children=num_children,
                elem=elem, strategy=strategy, allreduce_id=pkt.allreduce_id)
        out = on_packet(st, pkt, op, cost, start_time=t)
        outcomes.append(out)
        if out.emitted is not None:
            emitted.append(out.emitted)
        end = t + out.cycles_spent
        core_free[core] = end
        makespan = max(makespan, end)
        heapq.heappush(events, (end, 0, seq, ("end", core)))
        seq += 1

    while events:
        t, _, _, payload = heapq.heappop(events)
        kind = payload[0]
        if kind == "arrival":
            pkt = payload[1]
            sub = pkt.block_id % n_sub
            lo = sub * subset_size
            free = [c for c in range(lo, lo + subset_size) if core_free[c] <= t]
            if free:
                start_handler(t, free[0], pkt)
            else:
                queues[sub].append(pkt)
        else:
            core = payload[1]
            sub = core // subset_size
            if queues[sub]:
                start_handler(t, core, queues[sub].pop(0))

    n = len(outcomes)
    served = [o for o in outcomes if o.cycles_spent > 0]
    mean_service = sum(o.cycles_spent for o in served) / len(served) if served else 0.0
    mean_wait = sum(o.cycles_waiting for o in served) / len(served) if served else 0.0
    peak = max((s.peak_live_buffers for s in states.values()), default=0)
    return AggSimResult(
        outcomes=outcomes,
        emitted=emitted,
        makespan=makespan,
        packets=n,
        bandwidth_pkts_per_cycle=n / makespan if makespan > 0 else 0.0,
        mean_service=mean_service,
        mean_wait=mean_wait,
        peak_live_buffers=peak,
    )
