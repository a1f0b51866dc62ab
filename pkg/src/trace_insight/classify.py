"""Workload-distribution categories from binarized occupancy vectors.

Each machine becomes a 2N-bit vector: the first N bits say whether any batch
instance touched interval x, the next N whether any container lived there.
Lloyd k-means (k-means++ seeded) groups the vectors, and each centroid is
labeled by rules over its batch/container occupancy pattern:

  Type1  containers and batch throughout
  Type2  nothing scheduled
  Type3  batch only
  Type4  containers only
  Type5  no containers, batch stops early
  Type6  co-located, batch absent late
  Type7  co-located, one short batch gap
  Type8  co-located, batch absent early

Centroids matching no rule are labeled Unknown and reported, not hidden.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .aggregate import MachineSeries
from .trace_model import float_text

TYPE_LABELS = ("Type1", "Type2", "Type3", "Type4",
               "Type5", "Type6", "Type7", "Type8")
UNKNOWN_LABEL = "Unknown"


@dataclass(frozen=True, slots=True)
class OccupancyVector:
    machine: int
    bits: np.ndarray   # (2N,) uint8, batch occupancy first

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True, slots=True)
class LabelThresholds:
    """Cutoffs mapping fuzzy centroid occupancy onto the verbal patterns.

    ``always``: mean occupancy at or above this counts as "throughout".
    ``none``: at or below this counts as "absent".
    ``gap_fraction``: a single contiguous batch gap shorter than this share
    of the grid still counts as Type7 rather than Unknown.
    """

    always: float = 0.90
    none: float = 0.05
    gap_fraction: float = 0.25


@dataclass
class CategoryModel:
    k: int
    centroids: np.ndarray            # (k, 2N)
    machines: list[int]
    assignments: dict[int, int]      # machine -> cluster
    inertia: float
    inertia_history: list[float]
    labels: dict[int, str] = field(default_factory=dict)
    label_notes: dict[int, str] = field(default_factory=dict)


def binarize_occupancy(series: MachineSeries) -> OccupancyVector:
    bits = np.concatenate([
        (np.asarray(series.batch_count) > 0),
        (np.asarray(series.container_count) > 0),
    ]).astype(np.uint8)
    return OccupancyVector(series.machine, bits)


def occupancy_matrix(series: list[MachineSeries]) -> tuple[list[int], np.ndarray]:
    """Stacked bit vectors sorted by machine id (the canonical row order)."""
    vectors = sorted((binarize_occupancy(s) for s in series),
                     key=lambda v: v.machine)
    machines = [v.machine for v in vectors]
    matrix = np.stack([v.bits for v in vectors]).astype(float)
    return machines, matrix


def _plus_plus_init(matrix: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(matrix)
    centroids = np.empty((k, matrix.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = matrix[first]
    closest = ((matrix - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = closest.sum()
        if total <= 0:
            # remaining points all coincide with a chosen centroid; fall back
            # to a uniform draw over points not yet at distance zero twice
            candidates = np.flatnonzero(closest == closest.max())
            pick = int(candidates[rng.integers(len(candidates))])
        else:
            r = rng.random() * total
            pick = int(np.searchsorted(np.cumsum(closest), r, side="right"))
            pick = min(pick, n - 1)
        centroids[c] = matrix[pick]
        closest = np.minimum(closest, ((matrix - centroids[c]) ** 2).sum(axis=1))
    return centroids


def _assign(matrix: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((matrix[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    return assign, d2[np.arange(len(matrix)), assign]


def _lloyd_run(matrix: np.ndarray, k: int, rng: np.random.Generator,
               max_iter: int) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    centroids = _plus_plus_init(matrix, k, rng)
    assign, d2 = _assign(matrix, centroids)
    history: list[float] = [float(d2.sum())]
    for _ in range(max_iter):
        for c in range(k):
            members = matrix[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
        # re-seed empties before measuring convergence
        empty = [c for c in range(k) if not (assign == c).any()]
        if empty:
            dist_own = ((matrix - centroids[assign]) ** 2).sum(axis=1)
            rank = np.argsort(-dist_own, kind="stable")
            for c, pick in zip(empty, rank):
                centroids[c] = matrix[int(pick)]
        new_assign, d2 = _assign(matrix, centroids)
        history.append(float(d2.sum()))
        if (new_assign == assign).all():
            assign = new_assign
            break
        assign = new_assign
    return centroids, assign, float(d2.sum()), history


def kmeans_fit(machines: list[int], matrix: np.ndarray, k: int, seed: int,
               max_iter: int = 100, n_init: int = 10) -> CategoryModel:
    """Best of ``n_init`` seeded k-means++ starts, each polished with Lloyd
    iterations; the run with the lowest inertia wins (first wins ties).

    Rows are canonicalized (sorted by machine id) before any randomness is
    consumed, so permuting the input leaves the partition and the inertia
    unchanged. Clusters that empty out are re-seeded to the point currently
    farthest from its own centroid.
    """
    if len(machines) != len(matrix):
        raise ValueError("machine ids and matrix rows disagree")
    order = np.argsort(machines, kind="stable")
    machines = [machines[int(i)] for i in order]
    if len(set(machines)) != len(machines):
        raise ValueError("duplicate machine ids")
    matrix = np.asarray(matrix, float)[order]

    distinct = len(np.unique(matrix, axis=0))
    if k < 1 or k > distinct:
        raise ValueError(f"k must be in [1, {distinct}] "
                         f"(distinct vectors), got {k}")
    if n_init < 1:
        raise ValueError(f"n_init must be >= 1, got {n_init}")

    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        run = _lloyd_run(matrix, k, np.random.default_rng(child), max_iter)
        if best is None or run[2] < best[2]:
            best = run
    centroids, assign, inertia, history = best

    return CategoryModel(
        k=k,
        centroids=centroids,
        machines=machines,
        assignments={m: int(c) for m, c in zip(machines, assign)},
        inertia=inertia,
        inertia_history=history,
    )


def _zero_runs(bits: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of zeros as [start, stop) index pairs."""
    runs = []
    start = None
    for i, b in enumerate(bits):
        if not b and start is None:
            start = i
        elif b and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(bits)))
    return runs


def _label_centroid(centroid: np.ndarray,
                    thresholds: LabelThresholds) -> tuple[str, str]:
    n = len(centroid) // 2
    batch = centroid[:n]
    cont = centroid[n:]
    b_mean = float(batch.mean())
    c_mean = float(cont.mean())
    half = n // 2
    b_late = float(batch[half:].mean())
    note = f"batch={b_mean:.3f} container={c_mean:.3f}"

    if c_mean <= thresholds.none:
        if b_mean <= thresholds.none:
            return "Type2", note
        if b_late <= thresholds.none:
            return "Type5", note
        return "Type3", note
    if b_mean <= thresholds.none:
        return "Type4", note

    runs = _zero_runs(batch >= 0.5)
    if not runs:
        if b_mean >= thresholds.always and c_mean >= thresholds.always:
            return "Type1", note
        return UNKNOWN_LABEL, note + " (batch present everywhere but not solid)"
    if len(runs) == 1:
        start, stop = runs[0]
        if start == 0 and stop == n:
            return UNKNOWN_LABEL, note + " (batch occupancy nowhere decisive)"
        if stop == n:
            return "Type6", note
        if start == 0:
            return "Type8", note
        if stop - start < thresholds.gap_fraction * n:
            return "Type7", note
        return UNKNOWN_LABEL, note + f" (interior batch gap of {stop - start})"
    return UNKNOWN_LABEL, note + f" ({len(runs)} batch gaps)"


def label_clusters(model: CategoryModel,
                   thresholds: LabelThresholds | None = None) -> CategoryModel:
    """Attach a type label to every centroid; pure in the centroids, so
    relabeling an already labeled model changes nothing."""
    thresholds = thresholds or LabelThresholds()
    labels = {}
    notes = {}
    for c in range(model.k):
        labels[c], notes[c] = _label_centroid(model.centroids[c], thresholds)
    return replace(model, labels=labels, label_notes=notes)


@dataclass
class CategoryReport:
    counts: dict[str, int]                       # label -> machine count
    members: dict[str, list[int]]                # label -> machine ids
    usage_means: dict[str, tuple[float, float, float]]  # label -> cpu/mem/disk


def category_report(model: CategoryModel,
                    series: list[MachineSeries]) -> CategoryReport:
    if not model.labels:
        raise ValueError("model is unlabeled; run label_clusters first")
    by_machine = {s.machine: s for s in series}
    members: dict[str, list[int]] = {}
    for machine in model.machines:
        label = model.labels[model.assignments[machine]]
        members.setdefault(label, []).append(machine)
    counts = {}
    usage_means = {}
    for label in list(TYPE_LABELS) + [UNKNOWN_LABEL]:
        machines = sorted(members.get(label, []))
        if not machines:
            continue
        members[label] = machines
        counts[label] = len(machines)
        cpu = float(np.mean([by_machine[m].server_cpu for m in machines]))
        mem = float(np.mean([by_machine[m].server_mem for m in machines]))
        disk = float(np.mean([by_machine[m].server_disk for m in machines]))
        usage_means[label] = (cpu, mem, disk)
    return CategoryReport(counts=counts, members=members, usage_means=usage_means)


# ---------------------------------------------------------------------------
# artifact I/O


def write_assignments_csv(model: CategoryModel, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("machine", "cluster", "label"))
        for machine in model.machines:
            cluster = model.assignments[machine]
            writer.writerow([machine, cluster,
                             model.labels.get(cluster, "") or ""])


def counts_dict(model: CategoryModel, report: CategoryReport) -> dict:
    return {
        "k": model.k,
        "inertia": model.inertia,
        "counts": report.counts,
        "members": {label: report.members[label] for label in report.members},
        "usage_means": {
            label: {"cpu": u[0], "mem": u[1], "disk": u[2]}
            for label, u in report.usage_means.items()
        },
        "cluster_labels": {str(c): model.labels[c] for c in sorted(model.labels)},
        "label_notes": {str(c): model.label_notes[c]
                        for c in sorted(model.label_notes)},
    }


def write_counts_json(model: CategoryModel, report: CategoryReport,
                      path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(counts_dict(model, report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_type_usage_csv(report: CategoryReport, series: list[MachineSeries],
                         path: str) -> None:
    """Per-type mean cpu/mem/disk per interval, for external plotting."""
    by_machine = {s.machine: s for s in series}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("label", "interval_index", "cpu", "mem", "disk"))
        for label in sorted(report.members):
            machines = report.members[label]
            cpu = np.mean([by_machine[m].server_cpu for m in machines], axis=0)
            mem = np.mean([by_machine[m].server_mem for m in machines], axis=0)
            disk = np.mean([by_machine[m].server_disk for m in machines], axis=0)
            for x in range(len(cpu)):
                writer.writerow([label, x,
                                 float_text(float(cpu[x])),
                                 float_text(float(mem[x])),
                                 float_text(float(disk[x]))])
