"""Per-(machine, interval) usage attribution for containers and batch instances.

Container usage is charged from its measured fraction of the request; batch
usage is charged per overlap between the instance's [start, end] span and each
closed grid interval. An instance fully inside one interval charges its whole
average usage to that interval; partially overlapping instances charge the
overlapped share of their total runtime.

Counts (how many containers / batch instances a machine hosts in an interval)
use life-cycle intersection with the closed interval, so an instance touching
an interval boundary is a member there even though it charges nothing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .preprocess import DenseUsage
from .trace_model import Interval, IntervalGrid, TraceBundle, float_text


@dataclass(frozen=True, slots=True)
class ContainerAgg:
    machine: int
    interval: Interval
    container_count: int
    total_cpu: float   # fraction of machine CPU
    total_mem: float   # fraction of machine memory


@dataclass(frozen=True, slots=True)
class BatchAgg:
    machine: int
    interval: Interval
    batch_count: int
    total_cpu_cores: float
    total_cpu: float   # total_cpu_cores / machine cpu count
    total_mem: float


@dataclass
class MachineSeries:
    """Per-interval resource signals for one machine (all arrays share the
    grid's interval count)."""

    machine: int
    server_cpu: np.ndarray
    server_mem: np.ndarray
    server_disk: np.ndarray
    container_count: np.ndarray
    container_cpu: np.ndarray
    container_mem: np.ndarray
    batch_count: np.ndarray
    batch_cpu_cores: np.ndarray
    batch_cpu: np.ndarray
    batch_mem: np.ndarray


@dataclass
class AggDiagnostics:
    unknown_instance_records: int = 0
    out_of_grid_usage_records: int = 0
    zero_timestamp_instances: int = 0
    unplaced_instances: int = 0
    invalid_span_instances: int = 0
    zero_runtime_skipped: int = 0


def machine_cpu_counts(bundle: TraceBundle) -> dict[int, int]:
    """Core count per machine from its events (soft errors carry 0, so take
    the max)."""
    counts: dict[int, int] = {}
    for ev in bundle.events:
        if ev.cpu_count > 0:
            counts[ev.machine] = max(counts.get(ev.machine, 0), ev.cpu_count)
    return counts


def _cores_for(machine: int, counts: dict[int, int]) -> int:
    cores = counts.get(machine)
    if cores is None:
        cores = max(counts.values(), default=0)
    if cores <= 0:
        raise ValueError(f"cannot determine core count for machine {machine}; "
                         "no machine events with cpu_count > 0")
    return cores


def overlap_runtime(start: int, end: int, interval: Interval) -> int:
    """Seconds of [start, end] falling inside the closed interval; 0 when
    they do not intersect. The four position cases collapse to one min/max
    expression but are spelled out to mirror the attribution branches."""
    if end < interval.start or start > interval.end:
        return 0
    starts_inside = start >= interval.start
    ends_inside = end <= interval.end
    if starts_inside and ends_inside:
        return end - start
    if not starts_inside and ends_inside:
        return end - interval.start
    if starts_inside and not ends_inside:
        return interval.end - start
    return interval.end - interval.start


def _first_interval_touching(ts: int, grid: IntervalGrid) -> int:
    """Smallest interval index whose closed interval intersects [ts, inf)."""
    if ts <= grid.start:
        return 0
    return -(-(ts - grid.start) // grid.step) - 1


def _last_interval_touching(ts: int, grid: IntervalGrid) -> int:
    """Largest interval index whose closed interval intersects (-inf, ts]."""
    return min(grid.interval_count - 1, (ts - grid.start) // grid.step)


def aggregate_container_usage(bundle: TraceBundle, grid: IntervalGrid,
                              diagnostics: AggDiagnostics | None = None,
                              ) -> list[ContainerAgg]:
    """Container-level totals per (machine, interval).

    Expects container events to be filtered (one per instance). Usage records
    are bucketed to the interval containing their timestamp; several records
    for one container in one interval are averaged. Records naming unknown
    instances are skipped.
    """
    diag = diagnostics if diagnostics is not None else AggDiagnostics()
    cores = machine_cpu_counts(bundle)
    events = {ev.instance: ev for ev in bundle.container_events}
    n = grid.interval_count

    machines = sorted({ev.machine for ev in bundle.container_events})
    m_index = {m: i for i, m in enumerate(machines)}
    counts = np.zeros((len(machines), n), dtype=np.int64)
    for ev in bundle.container_events:
        first = _first_interval_touching(ev.timestamp, grid)
        if first < n:
            counts[m_index[ev.machine], first:] += 1

    # (machine row, interval) -> instance -> [cpu_of_req sum, mem_of_req sum, hits]
    buckets: dict[tuple[int, int], dict[int, list[float]]] = {}
    for rec in bundle.container_usage:
        ev = events.get(rec.instance)
        if ev is None:
            diag.unknown_instance_records += 1
            continue
        x = grid.interval_index(rec.timestamp)
        if x is None:
            diag.out_of_grid_usage_records += 1
            continue
        slot = buckets.setdefault((m_index[ev.machine], x), {})
        acc = slot.setdefault(rec.instance, [0.0, 0.0, 0.0])
        acc[0] += rec.cpu_of_req
        acc[1] += rec.mem_of_req
        acc[2] += 1.0

    aggs: list[ContainerAgg] = []
    for m in machines:
        row = m_index[m]
        machine_cores = _cores_for(m, cores)
        for x in range(n):
            total_cpu = 0.0
            total_mem = 0.0
            for instance, (cpu_sum, mem_sum, hits) in buckets.get((row, x), {}).items():
                ev = events[instance]
                total_cpu += (cpu_sum / hits) * ev.cpu_req / machine_cores
                total_mem += (mem_sum / hits) * ev.mem_req
            aggs.append(ContainerAgg(m, grid.interval(x),
                                     int(counts[row, x]), total_cpu, total_mem))
    return aggs


def aggregate_batch_usage(bundle: TraceBundle, grid: IntervalGrid,
                          diagnostics: AggDiagnostics | None = None,
                          duration_weighted: bool = False) -> list[BatchAgg]:
    """Batch-level totals per (machine, interval).

    Instances with a zero timestamp never ran inside the recorded window and
    are excluded (counted in diagnostics). ``duration_weighted`` switches to
    charging avg usage by the overlapped share of the interval instead of the
    default share-of-runtime scheme; it exists for sensitivity checks only.
    """
    diag = diagnostics if diagnostics is not None else AggDiagnostics()
    cores = machine_cpu_counts(bundle)
    n = grid.interval_count

    machines = sorted({bi.machine for bi in bundle.batch_instances if bi.machine >= 1})
    m_index = {m: i for i, m in enumerate(machines)}
    count = np.zeros((len(machines), n), dtype=np.int64)
    cpu_cores = np.zeros((len(machines), n))
    mem = np.zeros((len(machines), n))

    for bi in bundle.batch_instances:
        if bi.start == 0 or bi.end == 0:
            diag.zero_timestamp_instances += 1
            continue
        if bi.machine < 1:
            diag.unplaced_instances += 1
            continue
        if bi.end < bi.start:
            diag.invalid_span_instances += 1
            continue
        row = m_index[bi.machine]
        runtime = bi.end - bi.start
        first = _first_interval_touching(bi.start, grid)
        last = _last_interval_touching(bi.end, grid)
        for x in range(first, last + 1):
            iv = grid.interval(x)
            count[row, x] += 1
            if duration_weighted:
                share = overlap_runtime(bi.start, bi.end, iv) / grid.step
                cpu_cores[row, x] += bi.avg_cpu * share
                mem[row, x] += bi.avg_mem * share
                continue
            if bi.start >= iv.start and bi.end <= iv.end:
                cpu_cores[row, x] += bi.avg_cpu
                mem[row, x] += bi.avg_mem
            else:
                if runtime == 0:
                    diag.zero_runtime_skipped += 1
                    continue
                share = overlap_runtime(bi.start, bi.end, iv) / runtime
                cpu_cores[row, x] += bi.avg_cpu * share
                mem[row, x] += bi.avg_mem * share

    aggs: list[BatchAgg] = []
    for m in machines:
        row = m_index[m]
        machine_cores = _cores_for(m, cores)
        for x in range(n):
            aggs.append(BatchAgg(
                m, grid.interval(x), int(count[row, x]),
                float(cpu_cores[row, x]),
                float(cpu_cores[row, x]) / machine_cores,
                float(mem[row, x]),
            ))
    return aggs


def build_machine_series(bundle: TraceBundle, grid: IntervalGrid, dense: DenseUsage,
                         container_aggs: list[ContainerAgg],
                         batch_aggs: list[BatchAgg]) -> list[MachineSeries]:
    """One MachineSeries per machine id, zeros where a machine is absent from
    a source. Server usage per interval is the mean of the interval's two
    endpoint samples in the dense table, so all samples contribute."""
    n = grid.interval_count
    m_count = bundle.machine_count
    dense_rows = {int(m): i for i, m in enumerate(dense.machines)}

    c_count = {m: np.zeros(n) for m in range(1, m_count + 1)}
    c_cpu = {m: np.zeros(n) for m in range(1, m_count + 1)}
    c_mem = {m: np.zeros(n) for m in range(1, m_count + 1)}
    for agg in container_aggs:
        c_count[agg.machine][agg.interval.index] = agg.container_count
        c_cpu[agg.machine][agg.interval.index] = agg.total_cpu
        c_mem[agg.machine][agg.interval.index] = agg.total_mem
    b_count = {m: np.zeros(n) for m in range(1, m_count + 1)}
    b_cores = {m: np.zeros(n) for m in range(1, m_count + 1)}
    b_cpu = {m: np.zeros(n) for m in range(1, m_count + 1)}
    b_mem = {m: np.zeros(n) for m in range(1, m_count + 1)}
    for agg in batch_aggs:
        b_count[agg.machine][agg.interval.index] = agg.batch_count
        b_cores[agg.machine][agg.interval.index] = agg.total_cpu_cores
        b_cpu[agg.machine][agg.interval.index] = agg.total_cpu
        b_mem[agg.machine][agg.interval.index] = agg.total_mem

    series = []
    for m in range(1, m_count + 1):
        row = dense_rows.get(m)
        if row is None:
            cpu = np.zeros(n)
            mem_arr = np.zeros(n)
            disk = np.zeros(n)
        else:
            vals = dense.values[row]
            cpu = (vals[:-1, 0] + vals[1:, 0]) / 2.0
            mem_arr = (vals[:-1, 1] + vals[1:, 1]) / 2.0
            disk = (vals[:-1, 2] + vals[1:, 2]) / 2.0
        series.append(MachineSeries(
            machine=m,
            server_cpu=cpu, server_mem=mem_arr, server_disk=disk,
            container_count=c_count[m], container_cpu=c_cpu[m], container_mem=c_mem[m],
            batch_count=b_count[m], batch_cpu_cores=b_cores[m],
            batch_cpu=b_cpu[m], batch_mem=b_mem[m],
        ))
    return series


# ---------------------------------------------------------------------------
# artifact I/O

CONTAINER_AGG_HEADER = ("machine", "interval_index", "interval_start",
                        "container_count", "total_cpu", "total_mem")
BATCH_AGG_HEADER = ("machine", "interval_index", "interval_start",
                    "batch_count", "total_cpu_cores", "total_cpu", "total_mem")
SERIES_HEADER = ("machine", "interval_index", "interval_start",
                 "server_cpu", "server_mem", "server_disk",
                 "container_count", "container_cpu", "container_mem",
                 "batch_count", "batch_cpu", "batch_mem",
                 "residual_cpu", "residual_mem")


def write_container_agg_csv(aggs: list[ContainerAgg], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CONTAINER_AGG_HEADER)
        for agg in aggs:
            writer.writerow([agg.machine, agg.interval.index, agg.interval.start,
                             agg.container_count,
                             float_text(agg.total_cpu), float_text(agg.total_mem)])


def write_batch_agg_csv(aggs: list[BatchAgg], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BATCH_AGG_HEADER)
        for agg in aggs:
            writer.writerow([agg.machine, agg.interval.index, agg.interval.start,
                             agg.batch_count, float_text(agg.total_cpu_cores),
                             float_text(agg.total_cpu), float_text(agg.total_mem)])


def write_machine_series_csv(series: list[MachineSeries], grid: IntervalGrid,
                             path: str) -> None:
    """Server-level per machine-interval table; the residual columns report
    server usage not accounted for by containers plus batch."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SERIES_HEADER)
        for s in series:
            for x in range(grid.interval_count):
                residual_cpu = float(s.server_cpu[x] - s.container_cpu[x] - s.batch_cpu[x])
                residual_mem = float(s.server_mem[x] - s.container_mem[x] - s.batch_mem[x])
                writer.writerow([
                    s.machine, x, grid.start + x * grid.step,
                    float_text(float(s.server_cpu[x])),
                    float_text(float(s.server_mem[x])),
                    float_text(float(s.server_disk[x])),
                    int(s.container_count[x]),
                    float_text(float(s.container_cpu[x])),
                    float_text(float(s.container_mem[x])),
                    int(s.batch_count[x]),
                    float_text(float(s.batch_cpu[x])),
                    float_text(float(s.batch_mem[x])),
                    float_text(residual_cpu), float_text(residual_mem),
                ])
