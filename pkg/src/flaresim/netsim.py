"""Multi-switch network simulation: in-network dense and sparse allreduce
over a reduction tree embedded in a fat tree, ring-allreduce and host-based
sparse baselines, traffic accounting and report export.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

import networkx as nx
import numpy as np

from . import model
from .core import (
    AllreduceConfig,
    ElementType,
    ReductionTree,
    Strategy,
    SwitchConfig,
    build_reduction_tree,
    staggered_order,
)
from .sparse import (
    ARRAY_STORAGE,
    HASH_INSERT_CYCLES,
    ARRAY_INSERT_CYCLES,
    INDEX_BYTES,
    SparseConfig,
    flush_block,
    make_store,
    packetize_sparse,
)
from .agg import OP_SUM, ReduceOp

SINGLE_SWITCH = "single_switch"
FAT_TREE = "fat_tree"


@dataclass(frozen=True)
class NetworkConfig:
    allreduce: AllreduceConfig
    hosts: int = 4
    topology: str = SINGLE_SWITCH
    fat_tree_levels: int = 2
    ports_per_switch: int = 8
    link_gbps: float = 100.0
    switch: SwitchConfig = field(default_factory=SwitchConfig)
    # staggered send order spreads same-block packets in time; its rotation
    # is capped by in_flight_blocks (larger spreads would leave the hosts'
    # send windows without a common block, stalling completion) and it
    # trades window headroom for spread, so it is off by default here;
    # switch-level contention effects are the aggregation bench's domain
    header_bytes: int = 64
    forward_latency_s: float = 1e-6
    in_flight_blocks: int = 256
    staggered: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.hosts < 1:
            raise ValueError("need at least one host")
        if self.link_gbps <= 0:
            raise ValueError("link rate must be positive")
        if self.topology not in (SINGLE_SWITCH, FAT_TREE):
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.topology == FAT_TREE and self.fat_tree_levels != 2:
            raise ValueError("only 2-level fat trees are supported")


@dataclass
class SimReport:
    scheme: str
    completion_time: float
    total_bytes: int
    payload_bytes: int
    per_link_bytes: dict
    per_host_sent_payload: dict
    peak_input_buffer_bytes: dict
    peak_working_memory_bytes: dict
    drops: int
    workload_digest: str
    result: Optional[np.ndarray] = None
    extra_sparse_bytes: int = 0
    spill_packet_bytes: int = 0

    def export_csv(self, path, per_link_path=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "value"])
            w.writerow(["scheme", self.scheme])
            w.writerow(["completion_time_s", repr(self.completion_time)])
            w.writerow(["total_bytes", self.total_bytes])
            w.writerow(["payload_bytes", self.payload_bytes])
            w.writerow(["drops", self.drops])
            w.writerow(["extra_sparse_bytes", self.extra_sparse_bytes])
            w.writerow(["workload_digest", self.workload_digest])
        if per_link_path is not None:
            with open(per_link_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["link_id", "bytes"])
                for (u, v), b in sorted(self.per_link_bytes.items()):
                    w.writerow([f"{u}->{v}", b])


@dataclass(frozen=True)
class TrafficRatios:
    speedup: float
    traffic_ratio: float
    payload_ratio: float


def traffic_report(r: SimReport, baseline: SimReport) -> TrafficRatios:
    """Speedup and traffic reduction of `r` relative to `baseline`."""
    if r.workload_digest != baseline.workload_digest:
        raise ValueError("reports describe different workloads")
    return TrafficRatios(
        speedup=baseline.completion_time / r.completion_time,
        traffic_ratio=baseline.total_bytes / r.total_bytes,
        payload_ratio=baseline.payload_bytes / r.payload_bytes,
    )


# ---------------------------------------------------------------------------
# topology and inputs
# ---------------------------------------------------------------------------

def build_topology(cfg: NetworkConfig) -> tuple[nx.Graph, list[str]]:
    """Hosts H0..Hn attached to a single switch or a 2-level fat tree whose
    leaf switches face `ports_per_switch` hosts each."""
    g = nx.Graph()
    hosts = [f"H{i}" for i in range(cfg.hosts)]
    if cfg.topology == SINGLE_SWITCH:
        for h in hosts:
            g.add_edge(h, "S0")
        return g, hosts
    per_leaf = cfg.ports_per_switch
    n_leaves = -(-cfg.hosts // per_leaf)
    n_cores = max(1, cfg.ports_per_switch // 2)
    for i, h in enumerate(hosts):
        g.add_edge(h, f"L{i // per_leaf}")
    for l in range(n_leaves):
        for c in range(n_cores):
            g.add_edge(f"L{l}", f"C{c}")
    return g, hosts


def make_dense_inputs(cfg: NetworkConfig) -> list[np.ndarray]:
    """Seeded per-host vectors (small integers, exact in every dtype)."""
    rng = np.random.default_rng(cfg.seed)
    z = cfg.allreduce.total_elements
    dtype = cfg.allreduce.element_type.np_dtype
    return [
        rng.integers(-100, 100, size=z).astype(dtype) for _ in range(cfg.hosts)
    ]


def make_sparse_inputs(cfg: NetworkConfig,
                       density: Optional[float] = None) -> list[tuple]:
    """Seeded per-host (indices, values) pairs at the configured density."""
    rng = np.random.default_rng(cfg.seed)
    z = cfg.allreduce.total_elements
    dens = density if density is not None else cfg.allreduce.sparse.density
    dtype = cfg.allreduce.element_type.np_dtype
    nnz = max(1, int(round(z * dens)))
    out = []
    for _ in range(cfg.hosts):
        idx = np.sort(rng.choice(z, size=nnz, replace=False)).astype(np.int64)
        vals = rng.integers(1, 100, size=nnz).astype(dtype)
        out.append((idx, vals))
    return out


def densify_inputs(sparse_inputs, z: int, elem: ElementType) -> list[np.ndarray]:
    dense = []
    for idx, vals in sparse_inputs:
        v = np.zeros(z, dtype=elem.np_dtype)
        v[idx] = vals
        dense.append(v)
    return dense


def _digest(dense_inputs, elem: ElementType, hosts: int) -> str:
    h = hashlib.sha256()
    h.update(f"{hosts}:{elem.label}:".encode())
    for v in dense_inputs:
        h.update(np.ascontiguousarray(v).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# shared DES plumbing
# ---------------------------------------------------------------------------

class _Net:
    """Link-level discrete-event scaffolding shared by the in-network runs."""

    def __init__(self, cfg: NetworkConfig):
        self.cfg = cfg
        self.rate = cfg.link_gbps * 1e9 / 8.0  # bytes per second
        self.link_free: dict = {}
        self.per_link_bytes: dict = {}
        self.payload_bytes = 0
        self.events: list = []
        self._seq = 0

    def push(self, t: float, fn, *args):
        heapq.heappush(self.events, (t, self._seq, fn, args))
        self._seq += 1

    def send(self, t: float, u, v, payload: int, fn, *args) -> float:
        """Serialize payload+header on link (u, v); deliver via fn at the
        arrival time. Returns when the link frees."""
        nbytes = payload + self.cfg.header_bytes
        start = max(t, self.link_free.get((u, v), 0.0))
        done = start + nbytes / self.rate
        self.link_free[(u, v)] = done
        self.per_link_bytes[(u, v)] = self.per_link_bytes.get((u, v), 0) + nbytes
        self.payload_bytes += payload
        self.push(done, fn, *args)
        return done

    def run(self):
        while self.events:
            t, _, fn, args = heapq.heappop(self.events)
            fn(t, *args)

    def total_bytes(self) -> int:
        return sum(self.per_link_bytes.values())


class _CorePool:
    """K service slots on one switch; packets take the earliest-free core."""

    def __init__(self, k: int):
        self.free = [0.0] * k
        heapq.heapify(self.free)
        self.resident = 0
        self.peak_resident = 0

    def admit(self, t: float, service_s: float) -> float:
        start = max(t, heapq.heappop(self.free))
        end = start + service_s
        heapq.heappush(self.free, end)
        return end

    def enter(self):
        self.resident += 1
        self.peak_resident = max(self.peak_resident, self.resident)

    def leave(self):
        self.resident -= 1


def _switch_service_cycles(cfg: NetworkConfig, strategy: Strategy,
                           children: int) -> float:
    """Model-derived per-packet service time of one switch, in cycles."""
    ar = cfg.allreduce
    elems = ar.elements_per_packet
    cycles_per_elem = ar.element_type.cycles_per_element * (
        cfg.switch.cycles_per_fp32_add / 4.0)
    L = elems * cycles_per_elem
    delta = (ar.payload_bytes + cfg.header_bytes) / (
        cfg.link_gbps * 1e9 / 8.0) * cfg.switch.clock_hz
    spread = min(ar.num_blocks, cfg.in_flight_blocks)
    delta_c = delta * spread if cfg.staggered else delta
    p = model.ModelParams(
        K=cfg.switch.cores, S=cfg.switch.cores_per_cluster,
        P=max(1, children), delta=delta, delta_c=max(delta, delta_c),
        tau=L, L=L, C=cfg.switch.cores_per_cluster,
        B=strategy.buffers if strategy.kind == "multi" else 1)
    tau, _ = model.strategy_service_time(
        p, strategy, dma_copy_cycles=cfg.switch.dma_copy_cycles)
    return tau


def _resolve_strategy(cfg: NetworkConfig) -> Strategy:
    ar = cfg.allreduce
    if ar.strategy.kind != "auto":
        return ar.strategy
    return model.select_strategy(ar.data_bytes, ar.reproducible)


def _route(graph: nx.Graph, src, dst) -> list:
    return nx.shortest_path(graph, src, dst)


# ---------------------------------------------------------------------------
# in-network dense allreduce
# ---------------------------------------------------------------------------

def run_in_network_dense(cfg: NetworkConfig,
                         inputs: Optional[list] = None) -> SimReport:
    """Dense allreduce over the reduction tree.

    Hosts send one packet per block up their attachment switch; every tree
    switch aggregates the packets of its children and forwards one packet to
    its parent; the root broadcasts the result back down. Hosts keep at most
    `in_flight_blocks` blocks outstanding, which bounds the switches'
    working memory.
    """
    ar = cfg.allreduce
    topo, hosts = build_topology(cfg)
    tree = build_reduction_tree(topo, hosts)
    if inputs is None:
        inputs = make_dense_inputs(cfg)
    if len(inputs) != cfg.hosts:
        raise ValueError("need one input vector per host")
    strategy = _resolve_strategy(cfg)

    elem = ar.element_type
    z, n = ar.total_elements, ar.elements_per_packet
    num_blocks = ar.num_blocks
    block_elems = [min(n, z - b * n) for b in range(num_blocks)]
    block_payload = [e * elem.width for e in block_elems]

    net = _Net(cfg)
    clock = cfg.switch.clock_hz
    service_s = {
        s: _switch_service_cycles(cfg, strategy, len(tree.children[s])) / clock
        for s in tree.switches
    }
    pools = {s: _CorePool(cfg.switch.cores) for s in tree.switches}
    got: dict = {}          # (switch, block) -> packets seen
    blocks_live: dict = {s: 0 for s in tree.switches}
    peak_blocks: dict = {s: 0 for s in tree.switches}
    attach = {h: tree.path_to_root(h)[0] for h in hosts}

    send_order = {
        h: staggered_order(i, num_blocks, cfg.hosts,
                           max_spread=cfg.in_flight_blocks)
        if cfg.staggered else list(range(num_blocks))
        for i, h in enumerate(hosts)
    }
    sent_idx = {h: 0 for h in hosts}
    acked = {h: 0 for h in hosts}
    received = {h: 0 for h in hosts}
    per_host_sent = {h: 0 for h in hosts}
    done_time = 0.0

    def host_try_send(t, h):
        if sent_idx[h] >= num_blocks:
            return
        if sent_idx[h] - acked[h] >= cfg.in_flight_blocks:
            return
        b = send_order[h][sent_idx[h]]
        sent_idx[h] += 1
        per_host_sent[h] += block_payload[b]
        free_at = net.send(t, h, attach[h], block_payload[b],
                           switch_recv, attach[h], b)
        net.push(free_at, host_try_send, h)

    def switch_recv(t, s, b):
        pool = pools[s]
        pool.enter()
        key = (s, b)
        if key not in got:
            got[key] = 0
            blocks_live[s] += 1
            peak_blocks[s] = max(peak_blocks[s], blocks_live[s])
        end = pool.admit(t, service_s[s])
        net.push(end, switch_done, s, b)

    def switch_done(t, s, b):
        pools[s].leave()
        got[(s, b)] += 1
        if got[(s, b)] < len(tree.children[s]):
            return
        blocks_live[s] -= 1
        if s == tree.root:
            broadcast_down(t, s, b)
        else:
            net.send(t, s, tree.parent[s], block_payload[b], switch_recv,
                     tree.parent[s], b)

    def broadcast_down(t, s, b):
        for child in tree.children[s]:
            if child in attach:  # a host
                net.send(t, s, child, block_payload[b], host_recv, child)
            else:
                net.send(t, s, child, block_payload[b], forward_down, child, b)

    def forward_down(t, s, b):
        broadcast_down(t + cfg.forward_latency_s, s, b)

    def host_recv(t, h):
        nonlocal done_time
        received[h] += 1
        acked[h] += 1
        done_time = max(done_time, t)
        net.push(t, host_try_send, h)

    for h in hosts:
        net.push(0.0, host_try_send, h)
    net.run()

    if any(received[h] != num_blocks for h in hosts):
        raise RuntimeError("dense run finished with undelivered blocks")

    result = _tree_fold_dense(tree, hosts, inputs, elem)
    buf_bytes = ar.payload_bytes + cfg.header_bytes
    m_of = {}
    for s in tree.switches:
        p_s = len(tree.children[s])
        if strategy.kind == "tree":
            m_of[s] = (p_s - 1) / math.log2(p_s) if p_s > 1 else 1.0
        else:
            m_of[s] = float(strategy.buffers)
    return SimReport(
        scheme="in_network_dense",
        completion_time=done_time,
        total_bytes=net.total_bytes(),
        payload_bytes=net.payload_bytes,
        per_link_bytes=net.per_link_bytes,
        per_host_sent_payload=per_host_sent,
        peak_input_buffer_bytes={
            s: pools[s].peak_resident * buf_bytes for s in tree.switches},
        peak_working_memory_bytes={
            s: int(peak_blocks[s] * m_of[s] * n * elem.width)
            for s in tree.switches},
        drops=0,
        workload_digest=_digest(inputs, elem, cfg.hosts),
        result=result,
    )


def _tree_fold_dense(tree: ReductionTree, hosts, inputs, elem,
                     op: ReduceOp = OP_SUM):
    """Reduction result folded in the tree's child-port order; the order is
    a function of the tree alone, so repeated runs agree bitwise."""
    by_host = dict(zip(hosts, inputs))

    def fold(node):
        parts = []
        for child in tree.children[node]:
            if child in by_host:
                parts.append(np.asarray(by_host[child]))
            else:
                parts.append(fold(child))
        acc = parts[0].copy()
        for p in parts[1:]:
            acc = op.combine(acc, p, elem)
        return acc

    return fold(tree.root)


# ---------------------------------------------------------------------------
# ring allreduce baseline
# ---------------------------------------------------------------------------

def run_ring_allreduce(cfg: NetworkConfig,
                       inputs: Optional[list] = None) -> SimReport:
    """Scatter-reduce plus allgather around a logical host ring: each host
    sends 2(P-1) chunks of Z/P elements to its neighbour. A single host
    already holds the result and moves nothing."""
    ar = cfg.allreduce
    topo, hosts = build_topology(cfg)
    if inputs is None:
        inputs = make_dense_inputs(cfg)
    elem = ar.element_type
    p = cfg.hosts
    z = ar.total_elements
    if p == 1:
        return SimReport(
            scheme="ring_allreduce", completion_time=0.0, total_bytes=0,
            payload_bytes=0, per_link_bytes={},
            per_host_sent_payload={hosts[0]: 0},
            peak_input_buffer_bytes={}, peak_working_memory_bytes={},
            drops=0, workload_digest=_digest(inputs, elem, 1),
            result=np.asarray(inputs[0]).copy(),
        )

    bounds = [round(c * z / p) for c in range(p + 1)]
    chunk_elems = [bounds[c + 1] - bounds[c] for c in range(p)]
    routes = {
        i: _route(topo, hosts[i], hosts[(i + 1) % p]) for i in range(p)
    }

    per_link: dict = {}
    per_host_sent = {h: 0 for h in hosts}
    payload_total = 0
    time = 0.0
    mtu = ar.payload_bytes

    work = [np.asarray(v).copy() for v in inputs]

    for step in range(2 * (p - 1)):
        reducing = step < p - 1
        step_time = 0.0
        moved = []
        for i in range(p):
            # scatter-reduce: host i sends chunk (i-step); in the allgather
            # it forwards the fully reduced chunk it received last round
            c = (i - step) % p if reducing else (i - (step - (p - 1)) + 1) % p
            lo, hi = bounds[c], bounds[c + 1]
            payload = chunk_elems[c] * elem.width
            npkts = max(1, math.ceil(payload / mtu))
            nbytes = payload + npkts * cfg.header_bytes
            route = routes[i]
            hops = len(route) - 1
            for u, v in zip(route, route[1:]):
                per_link[(u, v)] = per_link.get((u, v), 0) + nbytes
            per_host_sent[hosts[i]] += payload
            payload_total += payload * hops
            # store-and-forward pipeline: chunk serialization plus one MTU
            # and one forwarding latency per additional hop
            step_time = max(
                step_time,
                nbytes / (cfg.link_gbps * 1e9 / 8.0)
                + (hops - 1) * ((mtu + cfg.header_bytes) / (cfg.link_gbps * 1e9 / 8.0)
                               + cfg.forward_latency_s),
            )
            moved.append((i, lo, hi, work[i][lo:hi].copy()))
        for i, lo, hi, data in moved:
            j = (i + 1) % p
            if reducing:
                work[j][lo:hi] = OP_SUM.combine(work[j][lo:hi], data, elem)
            else:
                work[j][lo:hi] = data
        time += step_time

    return SimReport(
        scheme="ring_allreduce",
        completion_time=time,
        total_bytes=sum(per_link.values()),
        payload_bytes=payload_total,
        per_link_bytes=per_link,
        per_host_sent_payload=per_host_sent,
        peak_input_buffer_bytes={},
        peak_working_memory_bytes={},
        drops=0,
        workload_digest=_digest(inputs, elem, cfg.hosts),
        result=work[0],
    )


# ---------------------------------------------------------------------------
# host-based sparse allreduce baseline
# ---------------------------------------------------------------------------

def run_host_sparse(cfg: NetworkConfig,
                    sparse_inputs: Optional[list] = None) -> SimReport:
    """Recursive-doubling sparse allreduce: log2(P) rounds in which partner
    hosts exchange their full sparse sets and union them (values combined on
    overlapping indices). Every host ends with the combined set, so the
    final broadcast is part of the exchange itself."""
    p = cfg.hosts
    if p < 2 or p & (p - 1):
        raise ValueError("host-based sparse allreduce needs a power-of-two host count")
    ar = cfg.allreduce
    if ar.sparse is None:
        raise ValueError("sparse config missing")
    topo, hosts = build_topology(cfg)
    if sparse_inputs is None:
        sparse_inputs = make_sparse_inputs(cfg)
    elem = ar.element_type
    z = ar.total_elements

    sets = [(np.asarray(i, dtype=np.int64), np.asarray(v, dtype=elem.np_dtype))
            for i, v in sparse_inputs]
    pair_bytes = elem.width + INDEX_BYTES
    max_pairs = max(1, ar.payload_bytes // pair_bytes)

    per_link: dict = {}
    per_host_sent = {h: 0 for h in hosts}
    payload_total = 0
    time = 0.0

    for r in range(int(math.log2(p))):
        step_time = 0.0
        new_sets = list(sets)
        for i in range(p):
            j = i ^ (1 << r)
            idx, vals = sets[i]
            payload = len(idx) * pair_bytes
            npkts = max(1, math.ceil(len(idx) / max_pairs))
            nbytes = payload + npkts * cfg.header_bytes
            route = _route(topo, hosts[i], hosts[j])
            hops = len(route) - 1
            for u, v in zip(route, route[1:]):
                per_link[(u, v)] = per_link.get((u, v), 0) + nbytes
            per_host_sent[hosts[i]] += payload
            payload_total += payload * hops
            step_time = max(
                step_time,
                nbytes / (cfg.link_gbps * 1e9 / 8.0)
                + (hops - 1) * ((ar.payload_bytes + cfg.header_bytes)
                                / (cfg.link_gbps * 1e9 / 8.0)
                                + cfg.forward_latency_s),
            )
            new_sets[j] = _union_combine(sets[j], sets[i], elem)
        sets = new_sets
        time += step_time

    idx, vals = sets[0]
    result = np.zeros(z, dtype=elem.np_dtype)
    result[idx] = vals
    dense_equiv = densify_inputs(sparse_inputs, z, elem)
    return SimReport(
        scheme="host_sparse",
        completion_time=time,
        total_bytes=sum(per_link.values()),
        payload_bytes=payload_total,
        per_link_bytes=per_link,
        per_host_sent_payload=per_host_sent,
        peak_input_buffer_bytes={},
        peak_working_memory_bytes={},
        drops=0,
        workload_digest=_digest(dense_equiv, elem, cfg.hosts),
        result=result,
    )


def _union_combine(a, b, elem: ElementType):
    idx = np.concatenate([a[0], b[0]])
    vals = np.concatenate([a[1], b[1]])
    order = np.argsort(idx, kind="stable")
    idx, vals = idx[order], vals[order]
    uniq, start = np.unique(idx, return_index=True)
    summed = np.add.reduceat(vals.astype(np.float64), start)
    return uniq, summed.astype(elem.np_dtype)


# ---------------------------------------------------------------------------
# in-network sparse allreduce
# ---------------------------------------------------------------------------

def run_in_network_sparse(cfg: NetworkConfig,
                          sparse_inputs: Optional[list] = None) -> SimReport:
    """Sparse allreduce over the reduction tree with per-level block stores.

    Leaf switches default to hash-with-spill storage, the root to a dense
    array. Spilled pairs are forwarded unaggregated toward the parent and
    counted in the sender's shard totals; completed blocks are flushed as
    sorted (index, value) packets. The root's flush is broadcast down.
    """
    ar = cfg.allreduce
    sp = ar.sparse
    if sp is None:
        raise ValueError("sparse config missing")
    topo, hosts = build_topology(cfg)
    tree = build_reduction_tree(topo, hosts)
    if sparse_inputs is None:
        sparse_inputs = make_sparse_inputs(cfg)
    elem = ar.element_type
    z = ar.total_elements
    num_blocks = math.ceil(z / sp.block_span)
    pair_bytes = elem.width + INDEX_BYTES
    clock = cfg.switch.clock_hz

    net = _Net(cfg)
    pools = {s: _CorePool(cfg.switch.cores) for s in tree.switches}
    attach = {h: tree.path_to_root(h)[0] for h in hosts}
    port_of = {
        s: {c: i for i, c in enumerate(tree.children[s])} for s in tree.switches
    }

    stores: dict = {}       # (switch, block) -> SparseBlockStore
    counters: dict = {}     # (switch, block) -> {port: [seen, announced]}
    live_mem: dict = {s: 0 for s in tree.switches}
    peak_mem: dict = {s: 0 for s in tree.switches}
    spill_bytes = 0
    measured_up: dict = {}  # (switch, block) -> emitted payload
    union_idx: dict = {}    # (switch, block) -> distinct indices received

    host_packets = {
        h: packetize_sparse(si[0], si[1], sp, z, src_port=0, elem=elem)
        for h, si in zip(hosts, sparse_inputs)
    }
    # group per block, then interleave by the host's staggered block order
    for h in hosts:
        by_block: dict = {}
        for pkt in host_packets[h]:
            by_block.setdefault(pkt.block_id, []).append(pkt)
        order = (staggered_order(hosts.index(h), num_blocks, cfg.hosts,
                                 max_spread=cfg.in_flight_blocks)
                 if cfg.staggered else range(num_blocks))
        host_packets[h] = [p for b in order for p in by_block[b]]

    sent_idx = {h: 0 for h in hosts}
    acked_blocks = {h: 0 for h in hosts}
    per_host_sent = {h: 0 for h in hosts}
    down_state: dict = {}   # (host, block) -> [seen, announced]
    result_at = {h: np.zeros(z, dtype=elem.np_dtype) for h in hosts}
    blocks_done = {h: 0 for h in hosts}
    done_time = 0.0

    # ordinal[i]: distinct blocks among a host's first i+1 packets, for the
    # in-flight window check
    block_ordinal = {}
    for h in hosts:
        seen: set = set()
        ords = []
        for pkt in host_packets[h]:
            seen.add(pkt.block_id)
            ords.append(len(seen))
        block_ordinal[h] = ords

    def store_for(s, b):
        key = (s, b)
        if key not in stores:
            st = make_store(sp, children=len(tree.children[s]),
                            is_root=(s == tree.root), block_id=b, elem=elem)
            stores[key] = st
            counters[key] = {}
            live_mem[s] += st.memory_bytes
            peak_mem[s] = max(peak_mem[s], live_mem[s])
            measured_up[key] = 0
            union_idx[key] = set()
        return stores[key]

    def host_try_send(t, h):
        pkts = host_packets[h]
        if sent_idx[h] >= len(pkts):
            return
        if block_ordinal[h][sent_idx[h]] - acked_blocks[h] > cfg.in_flight_blocks:
            return
        pkt = pkts[sent_idx[h]]
        sent_idx[h] += 1
        payload = pkt.num_elements * pair_bytes
        per_host_sent[h] += payload
        free_at = net.send(t, h, attach[h], payload,
                           switch_recv, attach[h], pkt, h)
        net.push(free_at, host_try_send, h)

    def switch_recv(t, s, pkt, sender):
        pool = pools[s]
        pool.enter()
        per_elem = (ARRAY_INSERT_CYCLES
                    if store_for(s, pkt.block_id).mode == ARRAY_STORAGE
                    else HASH_INSERT_CYCLES)
        service = max(64.0, pkt.num_elements * per_elem) / clock
        end = pool.admit(t, service)
        net.push(end, switch_done, s, pkt, sender)

    def switch_done(t, s, pkt, sender):
        nonlocal spill_bytes
        pools[s].leave()
        b = pkt.block_id
        st = store_for(s, b)
        union_idx[(s, b)].update(int(i) for i in pkt.indices)
        emitted = []
        for i, v in zip(pkt.indices, pkt.values):
            out = st.insert(int(i), v, OP_SUM)
            emitted += out.emitted
        for sp_pkt in emitted:
            payload = sp_pkt.num_elements * pair_bytes
            spill_bytes += payload
            measured_up[(s, b)] += payload
            _send_up_or_down(t, s, sp_pkt)
        port = port_of[s][sender]
        cnt = counters[(s, b)].setdefault(port, [0, None])
        cnt[0] += 1
        if pkt.shard_count is not None:
            cnt[1] = pkt.shard_count
        if cnt[1] is not None and cnt[0] > cnt[1]:
            raise RuntimeError(f"switch {s} saw too many packets on port {port}")
        if _block_complete(s, b):
            finish_block(t, s, b)

    def _block_complete(s, b) -> bool:
        cnts = counters[(s, b)]
        if len(cnts) < len(tree.children[s]):
            return False
        return all(a is not None and seen == a for seen, a in cnts.values())

    def finish_block(t, s, b):
        st = stores[(s, b)]
        scan = st.scan_cycles() / clock
        end = pools[s].admit(t, scan)
        net.push(end, emit_block, s, b)

    def emit_block(t, s, b):
        st = stores[(s, b)]
        pkts = flush_block(st)
        for pkt in pkts:
            measured_up[(s, b)] += pkt.num_elements * pair_bytes
            _send_up_or_down(t, s, pkt)
        live_mem[s] -= st.memory_bytes

    def _send_up_or_down(t, s, pkt):
        payload = pkt.num_elements * pair_bytes
        if s == tree.root:
            for child in tree.children[s]:
                if child in attach:
                    net.send(t, s, child, payload, host_recv, child, pkt)
                else:
                    net.send(t, s, child, payload, forward_down, child, pkt)
        else:
            net.send(t, s, tree.parent[s], payload, switch_recv,
                     tree.parent[s], pkt, s)

    def forward_down(t, s, pkt):
        t = t + cfg.forward_latency_s
        payload = pkt.num_elements * pair_bytes
        for child in tree.children[s]:
            if child in attach:
                net.send(t, s, child, payload, host_recv, child, pkt)
            else:
                net.send(t, s, child, payload, forward_down, child, pkt)

    def host_recv(t, h, pkt):
        nonlocal done_time
        b = pkt.block_id
        if pkt.num_elements:
            result_at[h][pkt.indices + b * sp.block_span] += pkt.values
        cnt = down_state.setdefault((h, b), [0, None])
        cnt[0] += 1
        if pkt.shard_count is not None:
            cnt[1] = pkt.shard_count
        if cnt[1] is not None and cnt[0] == cnt[1]:
            blocks_done[h] += 1
            acked_blocks[h] += 1
            done_time = max(done_time, t)
            net.push(t, host_try_send, h)

    for h in hosts:
        net.push(0.0, host_try_send, h)
    net.run()

    if any(blocks_done[h] != num_blocks for h in hosts):
        raise RuntimeError("sparse run finished with incomplete blocks")

    extra = sum(
        max(0, measured_up[k] - len(union_idx[k]) * pair_bytes)
        for k in measured_up
    )
    dense_equiv = densify_inputs(sparse_inputs, z, elem)
    results = list(result_at.values())
    for other in results[1:]:
        if not np.array_equal(results[0], other):
            raise RuntimeError("hosts disagree on the sparse result")
    buf_bytes = ar.payload_bytes + cfg.header_bytes
    return SimReport(
        scheme="in_network_sparse",
        completion_time=done_time,
        total_bytes=net.total_bytes(),
        payload_bytes=net.payload_bytes,
        per_link_bytes=net.per_link_bytes,
        per_host_sent_payload=per_host_sent,
        peak_input_buffer_bytes={
            s: pools[s].peak_resident * buf_bytes for s in tree.switches},
        peak_working_memory_bytes=dict(peak_mem),
        drops=0,
        workload_digest=_digest(dense_equiv, elem, cfg.hosts),
        result=results[0],
        extra_sparse_bytes=extra,
        spill_packet_bytes=spill_bytes,
    )
