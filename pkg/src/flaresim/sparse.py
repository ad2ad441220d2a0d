"""Sparse allreduce building blocks: sparse packetization with shard
counts, hash-with-spill and dense-array block stores, completion handling,
flush, and spill-traffic accounting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .agg import OP_SUM, BlockState, ProtocolError, ReduceOp
from .core import ElementType, ReductionPacket

HASH_STORAGE = "hash"
ARRAY_STORAGE = "array"

# handler cost constants (cycles); deliberately coarse plumbing numbers
HASH_INSERT_CYCLES = 8.0
ARRAY_INSERT_CYCLES = 4.0
SCAN_CYCLES_PER_CELL = 1.0
INDEX_BYTES = 4


@dataclass(frozen=True)
class SparseConfig:
    """Shape of a sparse allreduce.

    The block span defaults to max_elems_per_packet/density so that an
    average block's non-zero elements fill one packet. Hash sizing defaults
    are resolved per switch (they scale with its child count).
    """

    max_elems_per_packet: int = 256
    density: float = 0.1
    leaf_storage: str = HASH_STORAGE
    root_storage: str = ARRAY_STORAGE
    block_span: Optional[int] = None
    hash_slots: Optional[int] = None
    spill_capacity: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.density <= 1:
            raise ValueError("density must be in (0, 1]")
        if self.max_elems_per_packet < 1:
            raise ValueError("max_elems_per_packet must be >= 1")
        for s in (self.leaf_storage, self.root_storage):
            if s not in (HASH_STORAGE, ARRAY_STORAGE):
                raise ValueError(f"unknown storage kind {s!r}")
        if self.block_span is None:
            object.__setattr__(
                self, "block_span",
                math.ceil(self.max_elems_per_packet / self.density))
        if self.block_span < self.max_elems_per_packet:
            raise ValueError("block span cannot be below the packet capacity")

    def resolved_hash_slots(self, children: int) -> int:
        return self.hash_slots or 2 * self.max_elems_per_packet * children

    def resolved_spill_capacity(self) -> int:
        # one packet payload worth of (index, value) pairs
        return self.spill_capacity or 2 * self.max_elems_per_packet

    def storage_for(self, is_root: bool) -> str:
        return self.root_storage if is_root else self.leaf_storage


@dataclass
class InsertOutcome:
    kind: str  # stored | combined | spilled
    emitted: list = field(default_factory=list)
    cycles: float = 0.0


@dataclass
class SparseBlockStore:
    """Partially aggregated sparse block on one switch.

    Hash mode keeps (index, value) in an open table with a single probe;
    a colliding index goes to a bounded spill buffer which, when full, is
    emitted unaggregated toward the parent. Array mode keeps a span-sized
    value array with a non-zero mask and never spills.
    """

    mode: str
    span: int
    max_elems_per_packet: int
    elem: ElementType = ElementType.FP32
    block_id: int = 0
    allreduce_id: int = 0
    hash_slots: int = 0
    spill_capacity: int = 0
    sent_packets: int = 0  # spill packets already emitted for this block
    spilled_elements: int = 0

    def __post_init__(self):
        if self.mode == HASH_STORAGE:
            if self.hash_slots < 1 or self.spill_capacity < 1:
                raise ValueError("hash store needs slots and spill capacity")
            self._keys = np.full(self.hash_slots, -1, dtype=np.int64)
            self._vals = np.zeros(self.hash_slots, dtype=self.elem.np_dtype)
            self._spill: list = []
        elif self.mode == ARRAY_STORAGE:
            self._array = np.zeros(self.span, dtype=self.elem.np_dtype)
            self._mask = np.zeros(self.span, dtype=bool)
        else:
            raise ValueError(f"unknown storage kind {self.mode!r}")

    @property
    def memory_bytes(self) -> int:
        if self.mode == HASH_STORAGE:
            per_slot = self.elem.width + INDEX_BYTES
            return (self.hash_slots + self.spill_capacity) * per_slot
        return self.span * self.elem.width

    def scan_cycles(self) -> float:
        cells = self.hash_slots if self.mode == HASH_STORAGE else self.span
        return cells * SCAN_CYCLES_PER_CELL

    def insert(self, index: int, value, op: ReduceOp) -> InsertOutcome:
        if not 0 <= index < self.span:
            raise ProtocolError(f"index {index} outside block span {self.span}")
        if self.mode == ARRAY_STORAGE:
            if self._mask[index]:
                self._array[index : index + 1] = op.combine(
                    self._array[index : index + 1],
                    np.asarray([value], dtype=self.elem.np_dtype), self.elem)
                return InsertOutcome("combined", cycles=ARRAY_INSERT_CYCLES)
            self._array[index] = value
            self._mask[index] = True
            return InsertOutcome("stored", cycles=ARRAY_INSERT_CYCLES)

        slot = index % self.hash_slots
        if self._keys[slot] == -1:
            self._keys[slot] = index
            self._vals[slot] = value
            return InsertOutcome("stored", cycles=HASH_INSERT_CYCLES)
        if self._keys[slot] == index:
            self._vals[slot : slot + 1] = op.combine(
                self._vals[slot : slot + 1],
                np.asarray([value], dtype=self.elem.np_dtype), self.elem)
            return InsertOutcome("combined", cycles=HASH_INSERT_CYCLES)
        # single-probe policy: a colliding index spills, never overwrites
        for i, (k, v) in enumerate(self._spill):
            if k == index:
                combined = op.combine(
                    np.asarray([v], dtype=self.elem.np_dtype),
                    np.asarray([value], dtype=self.elem.np_dtype), self.elem)
                self._spill[i] = (k, combined[0])
                return InsertOutcome("spilled", cycles=HASH_INSERT_CYCLES)
        self._spill.append((index, value))
        self.spilled_elements += 1
        out = InsertOutcome("spilled", cycles=HASH_INSERT_CYCLES)
        if len(self._spill) >= self.spill_capacity:
            out.emitted = self._drain_spill()
        return out

    def _drain_spill(self) -> list[ReductionPacket]:
        items = sorted(self._spill)
        self._spill = []
        packets = _items_to_packets(
            items, self.max_elems_per_packet, self.elem,
            self.allreduce_id, self.block_id, shard_total=None)
        self.sent_packets += len(packets)
        return packets

    def items(self) -> list[tuple[int, float]]:
        """Stored (index, value) pairs in index order, spill included."""
        if self.mode == ARRAY_STORAGE:
            idx = np.nonzero(self._mask)[0]
            return [(int(i), self._array[i]) for i in idx]
        held = [
            (int(k), self._vals[i])
            for i, k in enumerate(self._keys) if k != -1
        ]
        return sorted(held + self._spill)

    def nonzeros(self) -> int:
        return len(self.items())


def make_store(cfg: SparseConfig, children: int, is_root: bool,
               block_id: int = 0, allreduce_id: int = 0,
               elem: ElementType = ElementType.FP32) -> SparseBlockStore:
    mode = cfg.storage_for(is_root)
    return SparseBlockStore(
        mode=mode,
        span=cfg.block_span,
        max_elems_per_packet=cfg.max_elems_per_packet,
        elem=elem,
        block_id=block_id,
        allreduce_id=allreduce_id,
        hash_slots=cfg.resolved_hash_slots(children),
        spill_capacity=cfg.resolved_spill_capacity(),
    )


def sparse_insert(store: SparseBlockStore, index: int, value,
                  op: ReduceOp) -> InsertOutcome:
    """Insert one (index, value) into a block store, combining on an
    existing index and spilling on a hash collision."""
    return store.insert(index, value, op)


def _items_to_packets(items, max_elems, elem, allreduce_id, block_id,
                      shard_total=None, src_port: int = 0):
    """Split sorted (index, value) pairs into packets; when `shard_total`
    is given the last packet announces it (header-only packet if empty)."""
    chunks = [items[i : i + max_elems] for i in range(0, len(items), max_elems)]
    if not chunks:
        chunks = [[]]
    packets = []
    for i, chunk in enumerate(chunks):
        last = i == len(chunks) - 1
        packets.append(ReductionPacket(
            allreduce_id=allreduce_id,
            block_id=block_id,
            src_port=src_port,
            values=np.asarray([v for _, v in chunk], dtype=elem.np_dtype),
            indices=np.asarray([k for k, _ in chunk], dtype=np.int64),
            shard_count=shard_total if last else None,
        ))
    return packets


def packetize_sparse(
    indices,
    values,
    cfg: SparseConfig,
    total_elements: int,
    allreduce_id: int = 0,
    src_port: int = 0,
    elem: ElementType = ElementType.FP32,
) -> list[ReductionPacket]:
    """Split one host's sparse vector into per-block packets.

    Packets never mix blocks; indices inside a packet are block-relative.
    Each block's last packet announces the packet count for that block, and
    an all-zero block still produces a header-only packet so the switch can
    account for the port.
    """
    indices = np.asarray(indices, dtype=np.int64)
    values = np.asarray(values, dtype=elem.np_dtype)
    if indices.shape != values.shape:
        raise ValueError("indices and values must align")
    if indices.size and (
        np.any(np.diff(indices) <= 0) or indices[0] < 0
    ):
        raise ValueError("indices must be sorted and unique")
    if indices.size and indices[-1] >= total_elements:
        raise ValueError(
            f"index {int(indices[-1])} outside the {total_elements}-element vector")
    span = cfg.block_span
    num_blocks = math.ceil(total_elements / span)
    packets = []
    for b in range(num_blocks):
        lo, hi = b * span, min((b + 1) * span, total_elements)
        sel = (indices >= lo) & (indices < hi)
        items = list(zip((indices[sel] - lo).tolist(), values[sel].tolist()))
        n_chunks = max(1, math.ceil(len(items) / cfg.max_elems_per_packet))
        packets.extend(_items_to_packets(
            items, cfg.max_elems_per_packet, elem, allreduce_id, b,
            shard_total=n_chunks, src_port=src_port))
    return packets


def shard_update(state: BlockState, port: int, is_last: bool,
                 shard_count: Optional[int] = None) -> bool:
    """Count one sparse packet from `port` against its announced total.

    The port's child bit is set once the seen count reaches the total its
    last packet announced; the block is complete when every port's bit is
    set. Packets beyond the announced total are a protocol error.
    """
    if (shard_count is not None) != is_last:
        raise ProtocolError("shard_count must be announced on exactly the last packet")
    state.shard_seen[port] = state.shard_seen.get(port, 0) + 1
    if shard_count is not None:
        if shard_count < 1:
            raise ProtocolError("announced shard count must be >= 1")
        state.shard_announced[port] = shard_count
    announced = state.shard_announced.get(port)
    seen = state.shard_seen[port]
    if announced is not None:
        if seen > announced:
            raise ProtocolError(
                f"port {port} sent {seen} packets but announced {announced}")
        if seen == announced:
            state.mark_port(port)
    return state.completed


def flush_block(store: SparseBlockStore, src_port: int = 0) -> list[ReductionPacket]:
    """Emit the aggregated non-zeros of a completed block, sorted by index.

    The announced shard total covers every packet this switch sent for the
    block, spill packets included, so the parent's counters close.
    """
    items = store.items()
    chunks = [
        items[i : i + store.max_elems_per_packet]
        for i in range(0, len(items), store.max_elems_per_packet)
    ] or [[]]
    total = store.sent_packets + len(chunks)
    return _items_to_packets(
        items, store.max_elems_per_packet, store.elem,
        store.allreduce_id, store.block_id, shard_total=total,
        src_port=src_port)


def spill_traffic(report) -> int:
    """Extra uplink payload bytes caused by spilling, relative to a fully
    aggregated (array-storage) run of the same input."""
    return report.extra_sparse_bytes


def tree_ordered_fold(per_port: list, elem: ElementType = ElementType.FP32,
                      op: ReduceOp = None) -> list[tuple[int, float]]:
    """Combine per-port sparse contributions in the dense tree engine's
    fixed pairwise order: ports pair left to right per level, an odd
    trailing port is promoted, the left member folds into the right.

    Index by index this reproduces the dense tree's floating-point
    operation order bitwise, with one caveat: absent elements contribute
    nothing rather than +0.0, so a negative-zero partial sum keeps its
    sign where a densified run would normalize it.
    """
    op = op or OP_SUM
    level = []
    for idx, vals in per_port:
        level.append({
            int(i): np.asarray([v], dtype=elem.np_dtype)
            for i, v in zip(idx, vals)
        })
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            left, right = level[i], level[i + 1]
            for k, v in left.items():
                right[k] = op.combine(v, right[k], elem) if k in right else v
            nxt.append(right)
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return sorted((k, v[0]) for k, v in level[0].items())


def densify(indices, values, size: int,
            elem: ElementType = ElementType.FP32) -> np.ndarray:
    out = np.zeros(size, dtype=elem.np_dtype)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size:
        out[idx] = np.asarray(values, dtype=elem.np_dtype)
    return out


def load_sparse_trace(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a per-host sparse trace file: one `index value` pair per line,
    sorted by index."""
    idx, vals = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            a, b = line.split()
            idx.append(int(a))
            vals.append(float(b))
    indices = np.asarray(idx, dtype=np.int64)
    if indices.size and np.any(np.diff(indices) <= 0):
        raise ValueError(f"{path}: indices must be sorted and unique")
    return indices, np.asarray(vals, dtype=np.float64)


def save_sparse_trace(path, indices, values):
    with open(path, "w") as fh:
        for i, v in zip(indices, values):
            fh.write(f"{int(i)} {v}\n")
