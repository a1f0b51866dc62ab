import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from trace_insight.aggregate import (
    AggDiagnostics,
    BATCH_AGG_HEADER,
    CONTAINER_AGG_HEADER,
    SERIES_HEADER,
    aggregate_batch_usage,
    aggregate_container_usage,
    build_machine_series,
    machine_cpu_counts,
    overlap_runtime,
    write_batch_agg_csv,
    write_container_agg_csv,
    write_machine_series_csv,
)
from trace_insight.preprocess import DenseUsage, METRICS
from trace_insight.trace_model import (
    BatchInstanceRecord,
    ContainerEvent,
    ContainerEventType,
    ContainerUsageRecord,
    InstanceStatus,
    IntervalGrid,
    MachineEvent,
    MachineEventType,
    TraceBundle,
)

GRID = IntervalGrid(1000, 1400, 100)   # 4 intervals


def add_event(machine, cores=64):
    return MachineEvent(0, machine, MachineEventType.ADD, None, cores, 1.0, 1.0)


def container(instance, machine, cpu_req=8.0, mem_req=0.05, ts=0):
    return ContainerEvent(ts, ContainerEventType.CREATE, instance, machine,
                          cpu_req, mem_req, 0.01, None)


def usage(instance, ts, cpu_of_req, mem_of_req=0.6):
    return ContainerUsageRecord(ts, instance, cpu_of_req, mem_of_req, 0.1,
                                0.4, 0.0, 0.0, 0.0, 1.5, 1.2, 2.0, 1.8)


def instance(start, end, machine=1, avg_cpu=0.8, avg_mem=0.01, job=1):
    return BatchInstanceRecord(start, end, job, 1, machine,
                               InstanceStatus.TERMINATED, 1, 1,
                               avg_cpu, avg_cpu, avg_mem, avg_mem)


# ---------------------------------------------------------------------------
# core counts


def test_machine_cpu_counts_takes_the_positive_max():
    bundle = TraceBundle(events=[
        add_event(1, 64),
        MachineEvent(5, 1, MachineEventType.SOFT_ERROR, "x", 0, 0.0, 0.0),
        add_event(2, 96),
    ], machine_count=2)
    assert machine_cpu_counts(bundle) == {1: 64, 2: 96}


def test_container_aggregation_needs_a_core_count():
    bundle = TraceBundle(container_events=[container(7, 1)], machine_count=1)
    with pytest.raises(ValueError, match="core count"):
        aggregate_container_usage(bundle, GRID)


# ---------------------------------------------------------------------------
# closed-interval overlap


def test_overlap_covers_all_four_positions():
    iv = GRID.interval(1)   # [1100, 1200]
    assert overlap_runtime(1120, 1180, iv) == 60    # inside
    assert overlap_runtime(1050, 1150, iv) == 50    # enters
    assert overlap_runtime(1150, 1250, iv) == 50    # leaves
    assert overlap_runtime(1000, 1300, iv) == 100   # covers
    assert overlap_runtime(900, 1050, iv) == 0      # disjoint left
    assert overlap_runtime(1250, 1300, iv) == 0     # disjoint right
    assert overlap_runtime(1200, 1250, iv) == 0     # touches the boundary


@given(st.integers(0, 2000), st.integers(0, 800))
def test_overlap_matches_the_clip_formula(start, length):
    end = start + length
    for x in range(GRID.interval_count):
        iv = GRID.interval(x)
        assert overlap_runtime(start, end, iv) == oracles.clipped_overlap(
            start, end, iv.start, iv.end)


# ---------------------------------------------------------------------------
# container attribution


def container_bundle():
    return TraceBundle(
        events=[add_event(1)],
        container_events=[container(7, 1)],
        container_usage=[
            usage(7, 1000, 0.5),
            usage(7, 1100, 0.4),
            usage(7, 1150, 0.6),
        ],
        machine_count=1,
    )


def test_container_usage_is_scaled_by_request_over_cores():
    aggs = aggregate_container_usage(container_bundle(), GRID)
    by_interval = {a.interval.index: a for a in aggs}
    # 50% of an 8-core request on a 64-core machine
    assert by_interval[0].total_cpu == pytest.approx(0.5 * 8.0 / 64.0)
    assert by_interval[0].total_mem == pytest.approx(0.6 * 0.05)
    # two samples in interval 1 average to 0.5 before scaling
    assert by_interval[1].total_cpu == pytest.approx(0.5 * 8.0 / 64.0)
    assert by_interval[2].total_cpu == 0.0


def test_container_counts_run_from_creation_to_the_end():
    bundle = container_bundle()
    bundle.container_events.append(container(8, 1, ts=1150))
    aggs = aggregate_container_usage(bundle, GRID)
    counts = [a.container_count for a in sorted(aggs, key=lambda a: a.interval.index)]
    # instance 7 exists everywhere; instance 8 joins in interval 1,
    # whose closed span [1100, 1200] is the first to contain ts 1150
    assert counts == [1, 2, 2, 2]


def test_container_created_on_a_boundary_counts_in_the_earlier_interval():
    bundle = container_bundle()
    bundle.container_events.append(container(8, 1, ts=1100))
    aggs = aggregate_container_usage(bundle, GRID)
    counts = [a.container_count for a in sorted(aggs, key=lambda a: a.interval.index)]
    assert counts == [2, 2, 2, 2]


def test_container_diagnostics_cover_unknown_and_out_of_grid():
    bundle = container_bundle()
    bundle.container_usage.append(usage(99, 1000, 0.5))   # never created
    bundle.container_usage.append(usage(7, 5000, 0.5))    # beyond the grid
    diag = AggDiagnostics()
    aggregate_container_usage(bundle, GRID, diagnostics=diag)
    assert diag.unknown_instance_records == 1
    assert diag.out_of_grid_usage_records == 1


# ---------------------------------------------------------------------------
# batch attribution


def batch_bundle(instances):
    return TraceBundle(events=[add_event(1), add_event(2)],
                       batch_instances=list(instances), machine_count=2)


def agg_map(aggs):
    return {(a.machine, a.interval.index): a for a in aggs}


def test_batch_instance_fully_inside_charges_its_average():
    aggs = aggregate_batch_usage(batch_bundle([instance(1010, 1050)]), GRID)
    by_key = agg_map(aggs)
    assert by_key[(1, 0)].batch_count == 1
    assert by_key[(1, 0)].total_cpu_cores == pytest.approx(0.8)
    assert by_key[(1, 0)].total_cpu == pytest.approx(0.8 / 64.0)
    assert by_key[(1, 0)].total_mem == pytest.approx(0.01)
    assert by_key[(1, 1)].batch_count == 0


def test_batch_instance_spanning_intervals_charges_runtime_shares():
    aggs = aggregate_batch_usage(batch_bundle([instance(1050, 1250)]), GRID)
    by_key = agg_map(aggs)
    assert by_key[(1, 0)].total_cpu_cores == pytest.approx(0.8 * 50 / 200)
    assert by_key[(1, 1)].total_cpu_cores == pytest.approx(0.8 * 100 / 200)
    assert by_key[(1, 2)].total_cpu_cores == pytest.approx(0.8 * 50 / 200)
    assert [by_key[(1, x)].batch_count for x in range(4)] == [1, 1, 1, 0]


def test_batch_point_touch_counts_but_charges_nothing():
    # ends exactly where interval 0 begins
    aggs = aggregate_batch_usage(batch_bundle([instance(990, 1000)]), GRID)
    by_key = agg_map(aggs)
    assert by_key[(1, 0)].batch_count == 1
    assert by_key[(1, 0)].total_cpu_cores == 0.0


def test_batch_instance_outside_the_grid_is_ignored():
    aggs = aggregate_batch_usage(batch_bundle([instance(900, 950)]), GRID)
    assert all(a.batch_count == 0 for a in aggs)


def test_batch_skips_carry_diagnostics():
    rows = [
        instance(0, 1050),            # zero start
        instance(1010, 0),            # zero end
        instance(1010, 1050, machine=0),
        instance(1100, 1050),         # ends before it starts
        instance(1010, 1050),
    ]
    diag = AggDiagnostics()
    aggs = aggregate_batch_usage(batch_bundle(rows), GRID, diagnostics=diag)
    assert diag.zero_timestamp_instances == 2
    assert diag.unplaced_instances == 1
    assert diag.invalid_span_instances == 1
    assert agg_map(aggs)[(1, 0)].batch_count == 1


def test_duration_weighted_mode_charges_by_interval_share():
    aggs = aggregate_batch_usage(batch_bundle([instance(1010, 1050)]), GRID,
                                 duration_weighted=True)
    by_key = agg_map(aggs)
    assert by_key[(1, 0)].total_cpu_cores == pytest.approx(0.8 * 40 / 100)


@given(st.integers(1000, 1399), st.integers(1, 400))
def test_batch_charge_is_conserved_inside_the_grid(start, length):
    end = min(start + length, 1400)
    aggs = aggregate_batch_usage(batch_bundle([instance(start, end)]), GRID)
    total = sum(a.total_cpu_cores for a in aggs if a.machine == 1)
    assert total == pytest.approx(0.8, rel=1e-9)


# ---------------------------------------------------------------------------
# merged per-machine series


def dense_for(machine_values):
    machines = np.array(sorted(machine_values), dtype=np.int64)
    values = np.zeros((len(machines), GRID.timestamp_count, len(METRICS)))
    for i, m in enumerate(machines):
        values[i, :, 0] = machine_values[m]
        values[i, :, 1] = np.asarray(machine_values[m]) / 2
        values[i, :, 2] = 0.4
    return DenseUsage(machines, GRID.timestamps(), values)


def test_series_averages_the_interval_endpoints():
    dense = dense_for({1: [0.1, 0.2, 0.3, 0.4, 0.5], 2: [0.0] * 5})
    bundle = TraceBundle(events=[add_event(1), add_event(2)], machine_count=2)
    series = build_machine_series(bundle, GRID, dense, [], [])
    assert series[0].machine == 1
    assert series[0].server_cpu == pytest.approx([0.15, 0.25, 0.35, 0.45])
    assert series[1].server_cpu == pytest.approx([0.0] * 4)


def test_series_places_aggregates_and_zero_fills_the_rest():
    dense = dense_for({1: [0.2] * 5, 2: [0.1] * 5})
    bundle = TraceBundle(
        events=[add_event(1), add_event(2)],
        container_events=[container(7, 1)],
        container_usage=[usage(7, 1000, 0.5)],
        batch_instances=[instance(1110, 1150, machine=2)],
        machine_count=2,
    )
    caggs = aggregate_container_usage(bundle, GRID)
    baggs = aggregate_batch_usage(bundle, GRID)
    series = build_machine_series(bundle, GRID, dense, caggs, baggs)
    assert series[0].container_count.tolist() == [1, 1, 1, 1]
    assert series[0].batch_count.tolist() == [0, 0, 0, 0]
    assert series[1].container_count.tolist() == [0, 0, 0, 0]
    assert series[1].batch_count.tolist() == [0, 1, 0, 0]
    assert series[1].batch_cpu[1] == pytest.approx(0.8 / 64.0)


def test_series_csv_headers_and_residuals(tmp_path):
    dense = dense_for({1: [0.2] * 5})
    bundle = TraceBundle(
        events=[add_event(1)],
        container_events=[container(7, 1)],
        container_usage=[usage(7, 1000, 0.5)],
        batch_instances=[instance(1010, 1050)],
        machine_count=1,
    )
    caggs = aggregate_container_usage(bundle, GRID)
    baggs = aggregate_batch_usage(bundle, GRID)
    series = build_machine_series(bundle, GRID, dense, caggs, baggs)

    spath = tmp_path / "series.csv"
    write_machine_series_csv(series, GRID, str(spath))
    lines = spath.read_text().splitlines()
    assert lines[0].split(",") == list(SERIES_HEADER)
    assert len(lines) == 1 + GRID.interval_count
    row = dict(zip(SERIES_HEADER, lines[1].split(",")))
    residual = float(row["server_cpu"]) - float(row["container_cpu"]) \
        - float(row["batch_cpu"])
    assert float(row["residual_cpu"]) == pytest.approx(residual)

    cpath = tmp_path / "containers.csv"
    write_container_agg_csv(caggs, str(cpath))
    assert cpath.read_text().splitlines()[0].split(",") == list(CONTAINER_AGG_HEADER)

    bpath = tmp_path / "batch.csv"
    write_batch_agg_csv(baggs, str(bpath))
    assert bpath.read_text().splitlines()[0].split(",") == list(BATCH_AGG_HEADER)
