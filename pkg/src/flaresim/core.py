"""Shared domain types: switch/allreduce configuration, wire records,
dense packetization, reduction-tree construction and staggered send order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Optional, Sequence

import networkx as nx
import numpy as np

if TYPE_CHECKING:
    from .sparse import SparseConfig

DEFAULT_PAYLOAD_BYTES = 1024
DEFAULT_HEADER_BYTES = 64


class ElementType(Enum):
    """Payload element types. `cycles_per_element` is the per-element
    aggregation cost on one core (vectorized types aggregate more than one
    element per cycle)."""

    INT8 = ("int8", 1, 1.0)
    INT16 = ("int16", 2, 2.0)
    INT32 = ("int32", 4, 4.0)
    FP16 = ("fp16", 2, 2.0)
    FP32 = ("fp32", 4, 4.0)

    def __init__(self, label: str, width: int, cycles_per_element: float):
        self.label = label
        self.width = width
        self.cycles_per_element = cycles_per_element

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(
            {
                "int8": np.int8,
                "int16": np.int16,
                "int32": np.int32,
                "fp16": np.float16,
                "fp32": np.float32,
            }[self.label]
        )

    @classmethod
    def from_label(cls, label: str) -> "ElementType":
        for e in cls:
            if e.label == label:
                return e
        raise ValueError(f"unknown element type {label!r}")


@dataclass(frozen=True)
class SwitchConfig:
    """Static description of one programmable switch processing unit."""

    clusters: int = 64
    cores_per_cluster: int = 8
    clock_hz: float = 1e9
    l1_bytes_per_cluster: int = 1 << 20
    l2_packet_bytes: int = 4 << 20
    l2_handler_bytes: int = 4 << 20
    cycles_per_fp32_add: int = 4
    dma_copy_cycles: int = 64

    def __post_init__(self):
        for name in (
            "clusters",
            "cores_per_cluster",
            "clock_hz",
            "l1_bytes_per_cluster",
            "l2_packet_bytes",
            "l2_handler_bytes",
            "cycles_per_fp32_add",
            "dma_copy_cycles",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"SwitchConfig.{name} must be strictly positive")

    @property
    def cores(self) -> int:
        """Total cores K = clusters x cores per cluster."""
        return self.clusters * self.cores_per_cluster


@dataclass(frozen=True)
class Strategy:
    """Aggregation strategy selector: one shared buffer per block, B
    concurrent buffers, or a fixed reduction tree over per-port slots."""

    kind: str  # auto | single | multi | tree
    buffers: int = 1

    def __post_init__(self):
        if self.kind not in ("auto", "single", "multi", "tree"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.buffers < 1:
            raise ValueError("strategy buffer count must be >= 1")

    @classmethod
    def single(cls) -> "Strategy":
        return cls("single")

    @classmethod
    def multi(cls, buffers: int) -> "Strategy":
        return cls("multi", buffers)

    @classmethod
    def tree(cls) -> "Strategy":
        return cls("tree")

    @classmethod
    def auto(cls) -> "Strategy":
        return cls("auto")

    def __str__(self) -> str:
        return f"multi{self.buffers}" if self.kind == "multi" else self.kind


@dataclass(frozen=True)
class AllreduceConfig:
    """One allreduce operation as seen by hosts and switches."""

    total_elements: int  # Z
    elements_per_packet: int = 256  # N
    element_type: ElementType = ElementType.FP32
    num_children: int = 1  # P, ports contributing to each block
    reproducible: bool = False
    strategy: Strategy = field(default_factory=Strategy.auto)
    sparse: Optional["SparseConfig"] = None
    payload_bytes: int = DEFAULT_PAYLOAD_BYTES

    def __post_init__(self):
        if self.total_elements < 1:
            raise ValueError("total_elements must be >= 1")
        if self.elements_per_packet < 1:
            raise ValueError("elements_per_packet must be >= 1")
        if self.num_children < 1:
            raise ValueError("num_children must be >= 1")
        if self.elements_per_packet * self.element_type.width > self.payload_bytes:
            raise ValueError(
                f"{self.elements_per_packet} x {self.element_type.width}B elements "
                f"exceed the {self.payload_bytes}B payload budget"
            )

    @property
    def num_blocks(self) -> int:
        return -(-self.total_elements // self.elements_per_packet)

    @property
    def data_bytes(self) -> int:
        return self.total_elements * self.element_type.width


@dataclass(frozen=True)
class ModelParams:
    """Inputs of the scheduling/aggregation closed-form models.

    All times are in cycles: delta is the switch-level packet interarrival,
    delta_c the interarrival within one block, tau the core service time and
    L the critical-section aggregation cost of one packet.
    """

    K: int
    S: int
    P: int
    delta: float
    delta_c: float
    tau: float
    L: float = 1024.0
    C: int = 8
    B: int = 1

    def __post_init__(self):
        if not 1 <= self.S <= self.K:
            raise ValueError("need 1 <= S <= K")
        if self.P < 1 or self.B < 1 or self.C < 1:
            raise ValueError("P, B, C must be >= 1")
        if self.delta <= 0 or self.delta_c <= 0:
            raise ValueError("interarrival times must be positive")


@dataclass(frozen=True)
class ModelOutputs:
    """Derived quantities of the closed-form models."""

    bandwidth_pkts_per_cycle: float
    delta_k: float
    max_queue: float
    packets_in_switch: float
    block_latency: float
    working_memory_buffers: float
    buffers_per_block: float


@dataclass
class ReductionPacket:
    """Wire record moved between hosts and switches.

    Dense payloads carry `values` only. Sparse payloads additionally carry
    block-relative `indices`, strictly increasing; an empty sparse packet is
    a completion marker for an all-zero block. `shard_count` is present only
    on a host's last packet of a block and announces how many packets that
    host sent for the block.
    """

    allreduce_id: int
    block_id: int
    src_port: int
    values: np.ndarray
    indices: Optional[np.ndarray] = None
    shard_count: Optional[int] = None
    arrival_time: float = 0.0

    def __post_init__(self):
        if self.indices is not None:
            if len(self.indices) != len(self.values):
                raise ValueError("sparse packet needs one index per value")
            if len(self.indices) > 1 and not np.all(np.diff(self.indices) > 0):
                raise ValueError("sparse indices must be strictly increasing")
            if len(self.indices) and self.indices[0] < 0:
                raise ValueError("sparse indices must be non-negative")
        elif len(self.values) == 0:
            raise ValueError("dense packet cannot be empty")

    @property
    def is_sparse(self) -> bool:
        return self.indices is not None

    @property
    def num_elements(self) -> int:
        return len(self.values)

    def payload_bytes(self, elem: ElementType, index_bytes: int = 4) -> int:
        per = elem.width + (index_bytes if self.is_sparse else 0)
        return self.num_elements * per


@dataclass
class ReductionTree:
    """Switch-level reduction tree: hosts are leaves, one switch is root."""

    root: object
    children: dict  # switch -> ordered list of child switches and hosts
    parent: dict  # switch -> parent switch, root absent
    hosts: list

    @property
    def switches(self) -> list:
        return list(self.children.keys())

    def host_port(self, switch, child) -> int:
        """Port index of `child` on `switch` (position in the child list)."""
        return self.children[switch].index(child)

    def path_to_root(self, host) -> list:
        """Switch path from the host's attachment switch up to the root."""
        attach = next(s for s, ch in self.children.items() if host in ch)
        path = [attach]
        while path[-1] != self.root:
            path.append(self.parent[path[-1]])
        return path


def packetize_dense(
    vector: Sequence | np.ndarray,
    cfg: AllreduceConfig,
    allreduce_id: int = 0,
    src_port: int = 0,
) -> list[ReductionPacket]:
    """Split a host vector into ceil(Z/N) packets of N elements each.

    Block ids run 0..ceil(Z/N)-1 and the last packet may be short;
    concatenating the payloads in block order reproduces the input.
    """
    data = np.asarray(vector, dtype=cfg.element_type.np_dtype)
    if data.ndim != 1 or data.size == 0:
        raise ValueError("input vector must be one-dimensional and non-empty")
    n = cfg.elements_per_packet
    return [
        ReductionPacket(
            allreduce_id=allreduce_id,
            block_id=b,
            src_port=src_port,
            values=data[b * n : (b + 1) * n],
        )
        for b in range(-(-data.size // n))
    ]


def staggered_order(host_index: int, num_blocks: int, num_hosts: int,
                    max_spread: Optional[int] = None) -> list[int]:
    """Block send order for one host under staggered sending.

    Each host rotates the natural order by floor(host_index * num_blocks /
    num_hosts), spreading same-block sends across hosts so the intra-block
    interarrival grows toward one block period per host. `max_spread` caps
    the rotation span; hosts limited to W in-flight blocks must not rotate
    past W or their send windows stop overlapping and no block can complete.
    """
    if num_blocks < 1:
        raise ValueError("num_blocks must be >= 1")
    if not 0 <= host_index < num_hosts:
        raise ValueError("need 0 <= host_index < num_hosts")
    spread = num_blocks if max_spread is None else min(num_blocks, max_spread)
    r = (host_index * spread) // num_hosts
    return list(range(r, num_blocks)) + list(range(r))


def build_reduction_tree(topology: nx.Graph, hosts: Sequence) -> ReductionTree:
    """Pick the switches connecting `hosts` and orient them into a tree.

    Greedy Steiner construction over the switch-only subgraph: leaf switches
    (those with participating hosts attached) are connected one by one via
    the shortest path to the already included component. The root is the
    tree center, so on a two-level fat tree the leaves aggregate their hosts
    and one core switch becomes root.
    """
    hosts = list(hosts)
    if not hosts:
        raise ValueError("need at least one host")
    host_set = set(hosts)
    for h in hosts:
        if h not in topology:
            raise ValueError(f"host {h!r} not present in topology")

    switch_graph = topology.subgraph(n for n in topology if n not in host_set)

    # Attachment switch per host: its unique switch neighbour (sorted tie-break).
    attach = {}
    for h in hosts:
        nbrs = sorted(str(n) for n in topology[h] if n not in host_set)
        if not nbrs:
            raise ValueError(f"host {h!r} is not attached to any switch")
        attach[h] = _node_by_str(topology, nbrs[0])

    leaf_switches = sorted({attach[h] for h in hosts}, key=str)

    included = {leaf_switches[0]}
    edges: set[tuple] = set()
    for ls in leaf_switches[1:]:
        if ls in included:
            continue
        try:
            lengths, paths = nx.single_source_dijkstra(switch_graph, ls)
        except nx.NodeNotFound:
            raise ValueError(f"switch {ls!r} missing from topology")
        reachable = sorted(
            (n for n in included if n in lengths), key=lambda n: (lengths[n], str(n))
        )
        if not reachable:
            bad = sorted(h for h in hosts if attach[h] == ls)[0]
            raise ValueError(f"host {bad!r} is unreachable from the other participants")
        path = paths[reachable[0]]
        included.update(path)
        edges.update(
            (a, b) if str(a) < str(b) else (b, a) for a, b in zip(path, path[1:])
        )

    root = _tree_center(included, edges)

    # Orient from the root and attach hosts to their switches.
    adj: dict = {n: set() for n in included}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    parent: dict = {}
    children: dict = {n: [] for n in included}
    order = [root]
    seen = {root}
    for node in order:
        for nxt in sorted(adj[node], key=str):
            if nxt not in seen:
                seen.add(nxt)
                parent[nxt] = node
                children[node].append(nxt)
                order.append(nxt)
    for h in sorted(hosts, key=str):
        children[attach[h]].append(h)

    return ReductionTree(root=root, children=children, parent=parent, hosts=hosts)


def _node_by_str(graph: nx.Graph, label: str):
    for n in graph:
        if str(n) == label:
            return n
    raise KeyError(label)


def _tree_center(nodes: set, edges: set[tuple]):
    # BFS eccentricity over a tree this small is cheap enough.
    adj: dict = {n: [] for n in nodes}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)

    def ecc(src) -> int:
        dist = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        return max(dist.values())

    return min(sorted(nodes, key=str), key=ecc)
