"""Experiment runner: parses a key/value spec file, executes model sweeps
and simulations across a parameter grid, and writes deterministic CSVs plus
a manifest. Subcommands: run, validate, list-bundled.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, model
from .agg import CostModel, simulate_strategy
from .core import (
    AllreduceConfig,
    ElementType,
    ModelParams,
    Strategy,
    SwitchConfig,
)
from .netsim import (
    NetworkConfig,
    densify_inputs,
    make_sparse_inputs,
    run_host_sparse,
    run_in_network_dense,
    run_in_network_sparse,
    run_ring_allreduce,
    traffic_report,
)
from .sched import (
    GLOBAL_FCFS,
    HIERARCHICAL_FCFS,
    SchedulePolicy,
    burst_trace,
    queue_stats,
    run_schedule,
    synth_arrivals,
)
from .sparse import SparseConfig, load_sparse_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RESOURCE = 3

KINDS = ("model_sweep", "sched_sim", "agg_bench", "sparse_bench", "netsim_compare")

KIB = 1024


class ResourceViolation(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    kind: str
    name: str
    seed: int
    output_dir: Path
    sections: dict
    path: Path
    digest: str

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def get_list(self, section: str, key: str, conv=str, default=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        return [conv(x.strip()) for x in str(raw).split(",") if x.strip()]

    def get_int(self, section, key, default=None):
        raw = self.get(section, key)
        return default if raw is None else int(raw)

    def get_float(self, section, key, default=None):
        raw = self.get(section, key)
        return default if raw is None else float(raw)


def bundled_specs() -> dict:
    out = {}
    base = resources.files("flaresim").joinpath("specs")
    for entry in base.iterdir():
        if entry.name.endswith(".spec"):
            out[entry.name[: -len(".spec")]] = entry
    return out


def _resolve_spec_path(name_or_path) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    bundled = bundled_specs()
    if str(name_or_path) in bundled:
        return Path(str(bundled[str(name_or_path)]))
    raise FileNotFoundError(f"no spec file or bundled spec named {name_or_path!r}")


def load_spec(path) -> tuple:
    """Parse a spec file; returns (spec or None, diagnostics)."""
    diags = []
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        return None, [f"unreadable spec file: {e}"]
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as e:
        return None, [f"parse error: {e}"]
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    exp = sections.get("experiment", {})
    kind = exp.get("kind", "")
    if kind not in KINDS:
        diags.append(
            f"experiment.kind: {kind!r} is not one of {', '.join(KINDS)}")
    name = exp.get("name", path.stem)
    try:
        seed = int(exp.get("seed", "0"))
    except ValueError:
        diags.append(f"experiment.seed: {exp.get('seed')!r} is not an integer")
        seed = 0
    spec = ExperimentSpec(
        kind=kind,
        name=name,
        seed=seed,
        output_dir=Path(exp.get("output_dir", ".")),
        sections=sections,
        path=path,
        digest=hashlib.sha256(text.encode()).hexdigest()[:16],
    )
    return spec, diags


def validate_spec(path) -> list[str]:
    """All violations in the spec file, not just the first."""
    spec, diags = load_spec(path)
    if spec is None:
        return diags
    if spec.kind not in KINDS:
        return diags

    def check_positive_ints(section, key):
        vals = spec.get_list(section, key)
        if vals is None:
            return
        for v in vals:
            try:
                if int(v) < 1:
                    diags.append(f"{section}.{key}: {v} must be >= 1")
            except ValueError:
                diags.append(f"{section}.{key}: {v!r} is not an integer")

    grid = spec.sections.get("grid", {})
    required = {
        "model_sweep": ["subset_sizes", "data_kib"],
        "sched_sim": ["scenarios"],
        "agg_bench": ["strategies", "data_kib"],
        "sparse_bench": ["densities", "storages"],
        "netsim_compare": ["schemes"],
    }[spec.kind]
    for key in required:
        if key not in grid or not str(grid[key]).strip():
            diags.append(f"grid.{key}: required for kind {spec.kind} and missing")
        elif not [x for x in str(grid[key]).split(",") if x.strip()]:
            diags.append(f"grid.{key}: empty grid")

    check_positive_ints("grid", "data_kib")
    check_positive_ints("grid", "subset_sizes")

    k = spec.get_int("switch", "clusters", 64)
    c = spec.get_int("switch", "cores_per_cluster", 8)
    if k < 1 or c < 1:
        diags.append("switch: clusters and cores_per_cluster must be >= 1")
    for s in spec.get_list("grid", "subset_sizes", int, []) or []:
        if s > k * c:
            diags.append(f"grid.subset_sizes: S={s} exceeds K={k * c} cores"
                         " (ModelParams needs 1 <= S <= K)")
        elif c % s and s % c:
            diags.append(f"grid.subset_sizes: S={s} would span cluster"
                         f" boundaries (C={c})")

    for d in spec.get_list("grid", "densities", float, []) or []:
        if not 0 < d <= 1:
            diags.append(f"grid.densities: {d} outside SparseConfig"
                         " density bound (0, 1]")
    for st in spec.get_list("grid", "storages", str, []) or []:
        if st not in ("hash", "array"):
            diags.append(f"grid.storages: {st!r} is not hash|array")
    for sc in spec.get_list("grid", "schemes", str, []) or []:
        if sc not in ("in_network_dense", "ring", "in_network_sparse",
                      "host_sparse"):
            diags.append(f"grid.schemes: unknown scheme {sc!r}")
    for st in spec.get_list("grid", "strategies", str, []) or []:
        if st not in ("single", "multi2", "multi4", "tree"):
            diags.append(f"grid.strategies: unknown strategy {st!r}")

    traces = spec.get_list("netsim", "trace_files", str, []) or []
    for t in traces:
        if not Path(t).exists():
            diags.append(f"netsim.trace_files: {t} does not exist")
    return diags


def _workers() -> int:
    env = os.environ.get("FLARESIM_THREADS")
    if env:
        return max(1, int(env))
    return min(8, os.cpu_count() or 1)


def _write_csv(path: Path, header: list[str], rows: list[list]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _switch_from(spec: ExperimentSpec) -> SwitchConfig:
    return SwitchConfig(
        clusters=spec.get_int("switch", "clusters", 64),
        cores_per_cluster=spec.get_int("switch", "cores_per_cluster", 8),
    )


def _gbps(pkts_per_cycle: float, payload: int, clock: float) -> float:
    return pkts_per_cycle * payload * 8 * clock / 1e9


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------

def _run_model_sweep(spec: ExperimentSpec, outdir: Path) -> list[Path]:
    """Single-buffer closed-form sweep over subset size and data size."""
    sw = _switch_from(spec)
    K, C = sw.cores, sw.cores_per_cluster
    P = spec.get_int("grid", "children", 64)
    N = spec.get_int("grid", "elements_per_packet", 256)
    L = float(N * 4)
    subset_sizes = spec.get_list("grid", "subset_sizes", int)
    sizes = spec.get_list("grid", "data_kib", int)
    rows = []
    for s in subset_sizes:
        for kib in sizes:
            blocks = max(1, kib)  # 1KiB packets
            delta = L / K
            delta_c = max(delta, delta * blocks)
            p = ModelParams(K=K, S=s, P=P, delta=delta, delta_c=delta_c,
                            tau=L, L=L, C=C)
            tau = model.service_time_single(p)
            p = ModelParams(K=K, S=s, P=P, delta=delta, delta_c=delta_c,
                            tau=tau, L=L, C=C)
            out = model.model_outputs(p, buffers_per_block=1.0)
            rows.append([
                s, kib * KIB,
                _gbps(out.bandwidth_pkts_per_cycle, N * 4, sw.clock_hz),
                int(out.packets_in_switch * (N * 4 + 64)),
                int(out.working_memory_buffers * N * 4),
            ])
    path = outdir / f"{spec.name}.csv"
    _write_csv(path, ["s", "data_size", "bandwidth_gbps", "q_bytes", "r_bytes"],
               rows)
    return [path]


def _run_sched_sim(spec: ExperimentSpec, outdir: Path) -> list[Path]:
    """Burst-scenario replays; per-scenario event trace plus a summary."""
    sw = SwitchConfig(
        clusters=spec.get_int("switch", "clusters", 4),
        cores_per_cluster=spec.get_int("switch", "cores_per_cluster", 1),
    )
    K = sw.cores
    P = spec.get_int("grid", "packets_per_block", 4)
    blocks = spec.get_int("grid", "blocks", 4)
    tau = spec.get_float("grid", "service_time", 4.0)
    delta = spec.get_float("grid", "delta", 1.0)
    scenarios = spec.get_list("grid", "scenarios", str)
    written = []
    rows = []
    for sc in scenarios:
        if sc == "global_steady":
            trace = burst_trace(blocks, P, delta, delta)
            policy = SchedulePolicy(GLOBAL_FCFS)
            s_model = K
        elif sc == "hier_grouped":
            trace = burst_trace(blocks, P, delta, delta)
            policy = SchedulePolicy(HIERARCHICAL_FCFS, 1)
            s_model = 1
        elif sc == "hier_staggered":
            trace = burst_trace(blocks, P, delta, delta * P)
            policy = SchedulePolicy(HIERARCHICAL_FCFS, 1)
            s_model = 1
        else:
            raise ValueError(f"unknown scenario {sc!r}")
        out = run_schedule(trace, policy, tau, sw)
        if out.drops:
            raise ResourceViolation(
                f"scenario {sc}: {len(out.drops)} packets dropped")
        max_q, max_res, mean_wait = queue_stats(out)
        dc = delta * P if sc == "hier_staggered" else delta
        p = ModelParams(K=K, S=s_model, P=P, delta=delta, delta_c=dc, tau=tau)
        rows.append([
            sc, max_q, max_res, mean_wait,
            model.max_queue_length(p), model.input_buffer_occupancy(p),
        ])
        tpath = outdir / f"{spec.name}_{sc}_trace.csv"
        out.export_csv(tpath)
        written.append(tpath)
    spath = outdir / f"{spec.name}.csv"
    _write_csv(spath, ["scenario", "max_queue", "max_resident", "mean_wait",
                       "model_q", "model_resident"], rows)
    return [spath] + written


_STRATEGIES = {
    "single": Strategy.single(),
    "multi2": Strategy.multi(2),
    "multi4": Strategy.multi(4),
    "tree": Strategy.tree(),
}


def _run_agg_bench(spec: ExperimentSpec, outdir: Path) -> list[Path]:
    """Simulated switch bandwidth per strategy, data size and data type.

    Runs at a reduced core count and scales the achieved bandwidth linearly
    to the full switch (clusters share nothing, so bandwidth scales with
    their number)."""
    sw = _switch_from(spec)
    K, C = sw.cores, sw.cores_per_cluster
    full_cores = spec.get_int("grid", "scale_to_cores", 512)
    P = spec.get_int("grid", "children", 16)
    hosts = P
    strategies = spec.get_list("grid", "strategies", str)
    sizes = spec.get_list("grid", "data_kib", int)
    dtypes = spec.get_list("grid", "dtypes", str, ["fp32"])
    elements = spec.get_int("grid", "elements_per_packet", 16)

    tasks = []
    for dtype in dtypes:
        for kib in sizes:
            for strat in strategies:
                tasks.append((dtype, kib, strat))

    def run_one(task):
        dtype, kib, strat = task
        elem = ElementType.from_label(dtype)
        blocks = max(1, kib * KIB // 1024)
        # one 1KiB packet carries payload_elems elements of this type
        payload_elems = 1024 // elem.width
        # keep arrays small, charge full per-packet cycles via the cost model
        cost = CostModel(
            cycles_per_element=elem.cycles_per_element * payload_elems / elements,
            dma_copy_cycles=sw.dma_copy_cycles,
        )
        L = cost.aggregate_cycles(elements)
        tau_tree = (P - 1) * L / P
        delta = max(1.0, round(tau_tree / K))
        ar = AllreduceConfig(total_elements=blocks * elements,
                             elements_per_packet=elements,
                             num_children=P)
        # staggering only spreads same-block packets past the aggregation
        # cost when there are enough blocks in flight; smaller reductions
        # arrive as grouped bursts
        staggered = blocks * delta >= L
        trace = synth_arrivals(ar, hosts=hosts, delta=delta, staggered=staggered)
        res = simulate_strategy(
            trace.events, _STRATEGIES[strat], num_children=P, cores=K,
            cores_per_cluster=C, subset_size=C, cost=cost)
        scale = full_cores / K
        bw = res.bandwidth_pkts_per_cycle * scale
        return [
            dtype, kib * KIB, strat,
            res.bandwidth_pkts_per_cycle,
            bw * 1024 * 8 * sw.clock_hz / 1e12,
            bw * payload_elems * sw.clock_hz / 1e9,
        ]

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        rows = list(pool.map(run_one, tasks))
    path = outdir / f"{spec.name}.csv"
    _write_csv(path, ["dtype", "data_size", "strategy",
                      "bandwidth_pkts_per_cycle", "bandwidth_tbps_scaled",
                      "gelems_per_sec"], rows)
    return [path]


def _run_sparse_bench(spec: ExperimentSpec, outdir: Path) -> list[Path]:
    """Single-switch sparse runs across density and storage type."""
    densities = spec.get_list("grid", "densities", float)
    storages = spec.get_list("grid", "storages", str)
    hosts = spec.get_int("grid", "hosts", 4)
    z = spec.get_int("grid", "total_elements", 65536)
    max_elems = spec.get_int("grid", "max_elems_per_packet", 64)
    hash_slots = spec.get_int("grid", "hash_slots")
    spill_capacity = spec.get_int("grid", "spill_capacity")

    tasks = [(d, st) for d in densities for st in storages]

    def run_one(task):
        density, storage = task
        sp = SparseConfig(max_elems_per_packet=max_elems, density=density,
                          leaf_storage=storage, root_storage=storage,
                          hash_slots=hash_slots, spill_capacity=spill_capacity)
        ar = AllreduceConfig(total_elements=z, elements_per_packet=max_elems,
                             element_type=ElementType.INT32,
                             num_children=hosts, sparse=sp)
        cfg = NetworkConfig(allreduce=ar, hosts=hosts, seed=spec.seed)
        rep = run_in_network_sparse(cfg)
        mem = max(rep.peak_working_memory_bytes.values())
        sent = sum(rep.per_host_sent_payload.values())
        bw = sent / rep.completion_time if rep.completion_time else 0.0
        ideal = max(1, rep.payload_bytes - rep.extra_sparse_bytes)
        return [density, storage, bw * 8 / 1e9, mem,
                rep.extra_sparse_bytes,
                1.0 + rep.extra_sparse_bytes / ideal]

    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        rows = list(pool.map(run_one, tasks))
    path = outdir / f"{spec.name}.csv"
    _write_csv(path, ["density", "storage", "bandwidth_gbps",
                      "mem_per_block_bytes", "extra_traffic_bytes",
                      "extra_traffic_factor"], rows)
    return [path]


def _run_netsim_compare(spec: ExperimentSpec, outdir: Path) -> list[Path]:
    """Desk-scale scheme comparison on one workload."""
    hosts = spec.get_int("netsim", "hosts", 16)
    z = spec.get_int("netsim", "total_elements", 1 << 20)
    density = spec.get_float("netsim", "density", 0.01)
    topology = spec.get("netsim", "topology", "fat_tree")
    ports = spec.get_int("netsim", "ports_per_switch", 4)
    link = spec.get_float("netsim", "link_gbps", 100.0)
    schemes = spec.get_list("grid", "schemes", str)

    sp = SparseConfig(max_elems_per_packet=256, density=density)
    ar = AllreduceConfig(total_elements=z, elements_per_packet=256,
                         element_type=ElementType.INT32, num_children=hosts,
                         sparse=sp)
    cfg = NetworkConfig(allreduce=ar, hosts=hosts, topology=topology,
                        ports_per_switch=ports, link_gbps=link,
                        seed=spec.seed)
    trace_files = spec.get_list("netsim", "trace_files", str)
    if trace_files:
        if len(trace_files) != hosts:
            raise ResourceViolation(
                f"need one sparse trace per host ({hosts}), got {len(trace_files)}")
        sparse_inputs = []
        for t in trace_files:
            idx, vals = load_sparse_trace(t)
            sparse_inputs.append(
                (idx, vals.astype(ar.element_type.np_dtype)))
    else:
        sparse_inputs = make_sparse_inputs(cfg)
    dense_inputs = densify_inputs(sparse_inputs, z, ar.element_type)

    runners = {
        "in_network_dense": lambda: run_in_network_dense(cfg, dense_inputs),
        "ring": lambda: run_ring_allreduce(cfg, dense_inputs),
        "in_network_sparse": lambda: run_in_network_sparse(cfg, sparse_inputs),
        "host_sparse": lambda: run_host_sparse(cfg, sparse_inputs),
    }
    reports = {}
    for sc in schemes:
        reports[sc] = runners[sc]()
    rows = [
        [sc, rep.completion_time, rep.payload_bytes, rep.total_bytes,
         rep.extra_sparse_bytes]
        for sc, rep in reports.items()
    ]
    path = outdir / f"{spec.name}.csv"
    _write_csv(path, ["scheme", "completion_time_s", "payload_bytes",
                      "total_bytes", "extra_sparse_bytes"], rows)
    written = [path]
    if "ring" in reports:
        ratio_rows = []
        for sc, rep in reports.items():
            if sc == "ring":
                continue
            r = traffic_report(rep, baseline=reports["ring"])
            ratio_rows.append([sc, r.speedup, r.traffic_ratio, r.payload_ratio])
        rpath = outdir / f"{spec.name}_vs_ring.csv"
        _write_csv(rpath, ["scheme", "speedup", "traffic_ratio",
                           "payload_ratio"], ratio_rows)
        written.append(rpath)
    return written


_RUNNERS = {
    "model_sweep": _run_model_sweep,
    "sched_sim": _run_sched_sim,
    "agg_bench": _run_agg_bench,
    "sparse_bench": _run_sparse_bench,
    "netsim_compare": _run_netsim_compare,
}


def run_experiment(name_or_path, output_dir=None) -> int:
    """Run one experiment spec; returns a process exit code."""
    try:
        path = _resolve_spec_path(name_or_path)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    diags = validate_spec(path)
    if diags:
        for d in diags:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    spec, _ = load_spec(path)
    outdir = Path(output_dir) if output_dir else spec.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        written = _RUNNERS[spec.kind](spec, outdir)
    except ResourceViolation as e:
        print(f"resource violation: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except RuntimeError as e:
        print(f"resource violation: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    manifest = {
        "name": spec.name,
        "kind": spec.kind,
        "config_digest": spec.digest,
        "seed": spec.seed,
        "tool_version": __version__,
        "outputs": [p.name for p in written],
    }
    mpath = outdir / f"{spec.name}_manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for p in written + [mpath]:
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="flaresim",
        description="In-network allreduce model and simulation experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment spec")
    p_run.add_argument("spec", help="spec file path or bundled spec name")
    p_run.add_argument("-o", "--output-dir", default=None)
    p_val = sub.add_parser("validate", help="validate a spec file")
    p_val.add_argument("spec")
    sub.add_parser("list-bundled", help="list bundled experiment specs")
    args = ap.parse_args(argv)

    if args.command == "list-bundled":
        for name in sorted(bundled_specs()):
            print(name)
        return EXIT_OK
    if args.command == "validate":
        try:
            path = _resolve_spec_path(args.spec)
        except FileNotFoundError as e:
            print(f"error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        diags = validate_spec(path)
        for d in diags:
            print(d)
        return EXIT_OK if not diags else EXIT_CONFIG
    return run_experiment(args.spec, args.output_dir)


if __name__ == "__main__":
    sys.exit(main())
