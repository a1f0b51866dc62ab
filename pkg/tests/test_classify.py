import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from trace_insight.aggregate import MachineSeries
from trace_insight.classify import (
    CategoryModel,
    LabelThresholds,
    UNKNOWN_LABEL,
    binarize_occupancy,
    category_report,
    counts_dict,
    kmeans_fit,
    label_clusters,
    occupancy_matrix,
    write_assignments_csv,
    write_counts_json,
    write_type_usage_csv,
)

N = 8


def series_for(machine, batch_bits, container_bits, cpu=0.2):
    batch = np.asarray(batch_bits, float)
    cont = np.asarray(container_bits, float)
    n = len(batch)
    return MachineSeries(
        machine=machine,
        server_cpu=np.full(n, cpu),
        server_mem=np.full(n, cpu * 2),
        server_disk=np.full(n, 0.4),
        container_count=cont * 3,
        container_cpu=cont * 0.05,
        container_mem=cont * 0.1,
        batch_count=batch * 5,
        batch_cpu_cores=batch * 2.0,
        batch_cpu=batch * 0.03,
        batch_mem=batch * 0.02,
    )


def model_for(centroids):
    rows = np.asarray(centroids, float)
    return CategoryModel(k=len(rows), centroids=rows, machines=[],
                         assignments={}, inertia=0.0, inertia_history=[])


def centroid(batch, cont):
    return np.concatenate([np.asarray(batch, float), np.asarray(cont, float)])


# ---------------------------------------------------------------------------
# occupancy bits


def test_binarize_puts_batch_bits_first():
    s = series_for(3, [1, 1, 0, 0], [1, 1, 1, 1])
    vec = binarize_occupancy(s)
    assert vec.machine == 3
    assert vec.bits.tolist() == [1, 1, 0, 0, 1, 1, 1, 1]


def test_occupancy_matrix_sorts_rows_by_machine():
    rows = [series_for(5, [1, 0], [0, 0]), series_for(2, [0, 1], [1, 1])]
    machines, matrix = occupancy_matrix(rows)
    assert machines == [2, 5]
    assert matrix.tolist() == [[0, 1, 1, 1], [1, 0, 0, 0]]


# ---------------------------------------------------------------------------
# k-means


def two_blob_matrix(seed=0):
    rng = np.random.default_rng(seed)
    low = rng.normal(0.0, 0.02, size=(4, 3))
    high = rng.normal(1.0, 0.02, size=(4, 3))
    return np.vstack([low, high])


def test_kmeans_finds_the_optimal_two_way_split():
    matrix = two_blob_matrix()
    machines = list(range(1, 9))
    model = kmeans_fit(machines, matrix, k=2, seed=0)
    want = oracles.best_two_partition_inertia(matrix)
    assert model.inertia == pytest.approx(want, rel=1e-9)
    groups = {model.assignments[m] for m in machines[:4]}
    assert len(groups) == 1
    assert {model.assignments[m] for m in machines[4:]} != groups


def test_kmeans_is_deterministic_and_order_free():
    matrix = two_blob_matrix(seed=3)
    machines = list(range(1, 9))
    base = kmeans_fit(machines, matrix, k=2, seed=42)
    again = kmeans_fit(machines, matrix, k=2, seed=42)
    assert base.assignments == again.assignments
    assert base.inertia == again.inertia

    order = [5, 2, 7, 0, 3, 6, 1, 4]
    shuffled = kmeans_fit([machines[i] for i in order], matrix[order],
                          k=2, seed=42)
    assert shuffled.assignments == base.assignments
    assert shuffled.inertia == base.inertia


def test_kmeans_k_equal_to_distinct_rows_is_exact():
    matrix = np.array([[0, 0], [0, 1], [1, 1]], float)
    model = kmeans_fit([1, 2, 3], matrix, k=3, seed=7)
    assert model.inertia == 0.0
    assert len(set(model.assignments.values())) == 3


def test_kmeans_rejects_bad_inputs():
    matrix = np.array([[0, 0], [0, 0], [1, 1]], float)
    with pytest.raises(ValueError, match="distinct"):
        kmeans_fit([1, 2, 3], matrix, k=3, seed=0)
    with pytest.raises(ValueError, match="duplicate machine"):
        kmeans_fit([1, 1, 2], matrix, k=2, seed=0)
    with pytest.raises(ValueError, match="disagree"):
        kmeans_fit([1, 2], matrix, k=2, seed=0)


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.data())
def test_kmeans_inertia_never_increases(seed, data):
    rows = data.draw(st.lists(
        st.lists(st.integers(0, 1), min_size=6, max_size=6),
        min_size=4, max_size=12))
    matrix = np.asarray(rows, float)
    distinct = len(np.unique(matrix, axis=0))
    k = data.draw(st.integers(1, distinct))
    model = kmeans_fit(list(range(1, len(rows) + 1)), matrix, k=k, seed=seed)
    history = model.inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))
    assert model.inertia == history[-1]


# ---------------------------------------------------------------------------
# centroid labeling


def test_labels_cover_all_eight_patterns():
    ones = np.ones(N)
    zeros = np.zeros(N)
    half_on = np.r_[np.ones(N // 2), np.zeros(N // 2)]
    half_off = np.r_[np.zeros(N // 2), np.ones(N // 2)]
    notch = ones.copy()
    notch[3] = 0.0   # gap of 1 < 0.25 * 8

    model = model_for([
        centroid(ones, ones),        # Type1
        centroid(zeros, zeros),      # Type2
        centroid(ones, zeros),       # Type3
        centroid(zeros, ones),       # Type4
        centroid(half_on, zeros),    # Type5
        centroid(half_on, ones),     # Type6
        centroid(notch, ones),       # Type7
        centroid(half_off, ones),    # Type8
    ])
    labeled = label_clusters(model)
    assert [labeled.labels[c] for c in range(8)] == [
        "Type1", "Type2", "Type3", "Type4",
        "Type5", "Type6", "Type7", "Type8",
    ]


def test_late_batch_with_no_containers_falls_back_to_type3():
    late = np.r_[np.zeros(N // 2), np.ones(N // 2)]
    labeled = label_clusters(model_for([centroid(late, np.zeros(N))]))
    assert labeled.labels[0] == "Type3"


def test_undecidable_centroids_become_unknown():
    ones = np.ones(N)
    wide_gap = np.r_[1.0, np.zeros(6), 1.0]          # interior gap of 6
    two_gaps = np.array([1, 0, 1, 0, 1, 1, 1, 1], float)
    mushy = np.full(N, 0.6)                          # present but not solid
    model = model_for([
        centroid(wide_gap, ones),
        centroid(two_gaps, ones),
        centroid(mushy, ones),
    ])
    labeled = label_clusters(model)
    assert all(v == UNKNOWN_LABEL for v in labeled.labels.values())
    assert "gap" in labeled.label_notes[0]


def test_thresholds_change_the_verdict():
    mushy = np.full(N, 0.6)
    model = model_for([centroid(mushy, mushy)])
    strict = label_clusters(model)
    assert strict.labels[0] == UNKNOWN_LABEL
    relaxed = label_clusters(model, LabelThresholds(always=0.5, none=0.05))
    assert relaxed.labels[0] == "Type1"


def test_labeling_is_idempotent():
    model = model_for([centroid(np.ones(N), np.ones(N))])
    once = label_clusters(model)
    twice = label_clusters(once)
    assert once.labels == twice.labels
    assert once.label_notes == twice.label_notes


# ---------------------------------------------------------------------------
# reporting


def labeled_model_and_series():
    rows = [
        series_for(1, np.ones(N), np.ones(N), cpu=0.30),
        series_for(2, np.ones(N), np.ones(N), cpu=0.20),
        series_for(3, np.zeros(N), np.zeros(N), cpu=0.01),
    ]
    machines, matrix = occupancy_matrix(rows)
    model = label_clusters(kmeans_fit(machines, matrix, k=2, seed=5))
    return model, rows


def test_category_report_counts_members_and_usage():
    model, rows = labeled_model_and_series()
    report = category_report(model, rows)
    assert report.counts == {"Type1": 2, "Type2": 1}
    assert report.members == {"Type1": [1, 2], "Type2": [3]}
    cpu, mem, disk = report.usage_means["Type1"]
    assert cpu == pytest.approx(0.25)
    assert mem == pytest.approx(0.50)
    assert disk == pytest.approx(0.40)


def test_category_report_requires_labels():
    rows = [series_for(1, np.ones(N), np.ones(N)),
            series_for(2, np.zeros(N), np.zeros(N))]
    machines, matrix = occupancy_matrix(rows)
    model = kmeans_fit(machines, matrix, k=2, seed=0)
    with pytest.raises(ValueError, match="unlabeled"):
        category_report(model, rows)


def test_artifact_writers(tmp_path):
    model, rows = labeled_model_and_series()
    report = category_report(model, rows)

    apath = tmp_path / "assignments.csv"
    write_assignments_csv(model, str(apath))
    lines = apath.read_text().splitlines()
    assert lines[0] == "machine,cluster,label"
    assert len(lines) == 4

    jpath = tmp_path / "counts.json"
    write_counts_json(model, report, str(jpath))
    data = json.loads(jpath.read_text())
    assert data == counts_dict(model, report)
    assert data["counts"] == {"Type1": 2, "Type2": 1}
    assert data["members"]["Type1"] == [1, 2]
    assert data["k"] == 2

    upath = tmp_path / "usage.csv"
    write_type_usage_csv(report, rows, str(upath))
    ulines = upath.read_text().splitlines()
    assert ulines[0] == "label,interval_index,cpu,mem,disk"
    assert len(ulines) == 1 + 2 * N
