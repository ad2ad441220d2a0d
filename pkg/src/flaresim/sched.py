"""Event-driven packet scheduler: global and hierarchical FCFS assignment
of packets to cores, queue/residency statistics, and arrival-trace
synthesis (steady, staggered, idealized bursts, exponential jitter).
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import AllreduceConfig, ReductionPacket, SwitchConfig, staggered_order

GLOBAL_FCFS = "global_fcfs"
HIERARCHICAL_FCFS = "hierarchical_fcfs"


@dataclass
class ArrivalTrace:
    """Time-ordered packet arrivals at one switch."""

    events: list  # [(arrival_time, ReductionPacket)]

    def __post_init__(self):
        times = [t for t, _ in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValueError("arrival times must be non-decreasing")

    def __len__(self) -> int:
        return len(self.events)


@dataclass(frozen=True)
class SchedulePolicy:
    kind: str = GLOBAL_FCFS
    subset_size: int = 1

    def __post_init__(self):
        if self.kind not in (GLOBAL_FCFS, HIERARCHICAL_FCFS):
            raise ValueError(f"unknown scheduling policy {self.kind!r}")
        if self.subset_size < 1:
            raise ValueError("subset_size must be >= 1")


@dataclass
class CoreJob:
    arrival: float
    start: float
    end: float
    packet: ReductionPacket


@dataclass
class ScheduleTrace:
    """Outcome of one scheduling run."""

    per_core: list  # core -> [CoreJob]
    per_core_max_queue: list
    per_core_peak_resident: list
    resident_series: list  # [(time, resident packets)], switch-wide
    drops: list  # [(time, ReductionPacket)]
    capacity: int

    @property
    def processed(self) -> int:
        return sum(len(jobs) for jobs in self.per_core)

    @property
    def peak_resident_instant(self) -> int:
        return max((r for _, r in self.resident_series), default=0)

    def export_csv(self, path):
        """One row per event: (time, core, event, block, queue_len)."""
        rows = []
        for c, jobs in enumerate(self.per_core):
            for j in jobs:
                rows.append((j.arrival, c, "arrival", j.packet.block_id))
                rows.append((j.start, c, "start", j.packet.block_id))
                rows.append((j.end, c, "end", j.packet.block_id))
        for t, pkt in self.drops:
            rows.append((t, -1, "drop", pkt.block_id))
        rows.sort(key=lambda r: (r[0], r[1], r[2]))
        queue = [0] * len(self.per_core)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "core", "event", "block", "queue_len"])
            for t, c, ev, blk in rows:
                if ev == "arrival":
                    queue[c] += 1
                elif ev == "start":
                    queue[c] -= 1
                w.writerow([t, c, ev, blk, queue[c] if c >= 0 else 0])


def run_schedule(
    trace: ArrivalTrace,
    policy: SchedulePolicy,
    service_time: float,
    cfg: SwitchConfig,
    mtu_bytes: int = 1024,
) -> ScheduleTrace:
    """Assign a trace to cores and compute the exact event timeline.

    Hierarchical FCFS maps block_id modulo the number of subsets to a fixed
    subset of cores on one cluster; packets go to the least-recently-freed
    core of the subset. Global FCFS draws from all cores. With a constant
    service time, assigning each arrival to the earliest-free core is
    exactly FCFS. Arrivals beyond the input-buffer capacity are dropped.
    """
    if service_time <= 0:
        raise ValueError("service_time must be positive")
    if not trace.events:
        raise ValueError("trace must be nonempty")
    k = cfg.cores
    s = policy.subset_size if policy.kind == HIERARCHICAL_FCFS else k
    if k % s:
        raise ValueError("subset size must divide the core count")
    if policy.kind == HIERARCHICAL_FCFS and (
        s > cfg.cores_per_cluster or cfg.cores_per_cluster % s
    ):
        raise ValueError("subsets must fit within one cluster")
    n_sub = k // s
    capacity = cfg.l2_packet_bytes // mtu_bytes

    free_at = [0.0] * k
    jobs: list[list[CoreJob]] = [[] for _ in range(k)]
    drops: list = []
    # (time, delta) pairs; ends sort before arrivals at equal times
    resident_events: list[tuple[float, int, int]] = []
    active_ends: list[float] = []  # min-heap of in-buffer packet end times

    for t, pkt in trace.events:
        while active_ends and active_ends[0] <= t:
            heapq.heappop(active_ends)
        if len(active_ends) >= capacity:
            drops.append((t, pkt))
            continue
        if policy.kind == HIERARCHICAL_FCFS:
            lo = (pkt.block_id % n_sub) * s
            cores = range(lo, lo + s)
        else:
            cores = range(k)
        core = min(cores, key=lambda c: (free_at[c], c))
        start = max(t, free_at[core])
        end = start + service_time
        free_at[core] = end
        jobs[core].append(CoreJob(arrival=t, start=start, end=end, packet=pkt))
        heapq.heappush(active_ends, end)
        resident_events.append((t, 1, 1))
        resident_events.append((end, 0, -1))

    per_core_max_queue = []
    per_core_peak_resident = []
    for js in jobs:
        queue_ev = sorted(
            [(j.arrival, 1, 1) for j in js] + [(j.start, 0, -1) for j in js]
        )
        res_ev = sorted(
            [(j.arrival, 1, 1) for j in js] + [(j.end, 0, -1) for j in js]
        )
        per_core_max_queue.append(_peak(queue_ev))
        per_core_peak_resident.append(_peak(res_ev))

    resident_events.sort()
    series = []
    level = 0
    for t, _, d in resident_events:
        level += d
        series.append((t, level))

    return ScheduleTrace(
        per_core=jobs,
        per_core_max_queue=per_core_max_queue,
        per_core_peak_resident=per_core_peak_resident,
        resident_series=series,
        drops=drops,
        capacity=capacity,
    )


def _peak(events: list[tuple[float, int, int]]) -> int:
    level = peak = 0
    for _, _, d in events:
        level += d
        peak = max(peak, level)
    return peak


def queue_stats(trace: ScheduleTrace) -> tuple[int, int, float]:
    """(max per-core queue, max resident packets, mean wait cycles).

    Max resident sums each core's own peak occupancy (queued plus in
    service): the input-buffer provisioning bound that is reached when the
    per-core bursts align in time, as assumed by the occupancy model.
    """
    max_queue = max(trace.per_core_max_queue, default=0)
    max_resident = sum(trace.per_core_peak_resident)
    waits = [j.start - j.arrival for js in trace.per_core for j in js]
    mean_wait = sum(waits) / len(waits) if waits else 0.0
    return max_queue, max_resident, mean_wait


def synth_arrivals(
    cfg: AllreduceConfig,
    hosts: int,
    delta: float,
    staggered: bool = False,
    jitter_seed: int = 0,
    jitter: float = 0.0,
    elements: Optional[int] = None,
) -> ArrivalTrace:
    """Synthesize the switch-level arrival trace of `hosts` senders.

    Host h sends its j-th block at h*delta + j*hosts*delta: every host emits
    one packet per hosts*delta and the switch sees one packet per delta.
    Staggered sending rotates each host's block order. `jitter` > 0 adds an
    exponentially distributed delay with that mean to every send,
    deterministically from `jitter_seed`.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    num_blocks = cfg.num_blocks
    n = cfg.elements_per_packet if elements is None else elements
    rng = np.random.default_rng(jitter_seed)
    events = []
    for h in range(hosts):
        order = (
            staggered_order(h, num_blocks, hosts)
            if staggered
            else list(range(num_blocks))
        )
        for j, block in enumerate(order):
            t = h * delta + j * hosts * delta
            if jitter > 0:
                t += float(rng.exponential(jitter))
            pkt = ReductionPacket(
                allreduce_id=0,
                block_id=block,
                src_port=h,
                values=np.zeros(n, dtype=cfg.element_type.np_dtype),
                arrival_time=t,
            )
            events.append((t, pkt))
    events.sort(key=lambda e: (e[0], e[1].src_port, e[1].block_id))
    return ArrivalTrace(events=events)


def burst_trace(
    num_blocks: int,
    packets_per_block: int,
    delta: float,
    delta_c: float,
    elements: int = 1,
    allreduce_id: int = 0,
) -> ArrivalTrace:
    """Idealized burst pattern: one packet per delta switch-wide, same-block
    packets exactly delta_c apart.

    With m = delta_c/delta, m blocks interleave per frame; frames of m
    blocks follow each other back to back. m = 1 reproduces the grouped
    burst scenario, m = packets_per_block the fully staggered one.
    """
    if delta <= 0 or delta_c < delta:
        raise ValueError("need delta > 0 and delta_c >= delta")
    m = max(1, round(delta_c / delta))
    frame_span = m * packets_per_block * delta
    events = []
    for b in range(num_blocks):
        frame, lane = divmod(b, m)
        for i in range(packets_per_block):
            t = frame * frame_span + lane * delta + i * delta_c
            pkt = ReductionPacket(
                allreduce_id=allreduce_id,
                block_id=b,
                src_port=i,
                values=np.zeros(elements, dtype=np.float32),
                arrival_time=t,
            )
            events.append((t, pkt))
    events.sort(key=lambda e: (e[0], e[1].block_id))
    return ArrivalTrace(events=events)


def mean_intra_block_gap(trace: ArrivalTrace) -> float:
    """Average interarrival between consecutive same-block packets."""
    per_block: dict[int, list[float]] = {}
    for t, pkt in trace.events:
        per_block.setdefault(pkt.block_id, []).append(t)
    gaps = []
    for times in per_block.values():
        times.sort()
        gaps.extend(b - a for a, b in zip(times, times[1:]))
    return sum(gaps) / len(gaps) if gaps else 0.0
