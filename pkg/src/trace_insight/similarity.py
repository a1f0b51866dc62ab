"""DTW scoring of machine resource curves against sampled standard curves.

A resource curve is the per-interval (cpu, mem, disk) track of one machine.
Distance between two curves is the cumulative dynamic-time-warping cost with
squared Euclidean point cost, reported raw (no path-length normalization);
the normalized form sqrt(cost)/K is available behind a flag. A set of
standard curves is drawn from a seeded sample, the median pairwise distance
within the sample is the baseline value, and machines whose mean distance to
the standards exceeds a threshold get flagged.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .aggregate import MachineSeries
from .trace_model import float_text

DEFAULT_THRESHOLD = 3.0
DEFAULT_RANGE_EDGES = (0.0, 1.0, 2.0, 3.0, 5.0)

# below this cost-matrix size the plain-python DP beats the vectorized one
_SMALL_DTW_CELLS = 256


@dataclass(frozen=True, slots=True)
class ResourceCurve:
    machine: int
    points: np.ndarray   # (n, 3) float

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, slots=True)
class DtwResult:
    machine: int
    distance: float
    path_length: int


@dataclass
class DtwReport:
    standard_value: float
    standard_machines: list[int]
    machines: list[int]
    distances: np.ndarray        # (machines, standards)
    mean_distance: np.ndarray    # (machines,)
    range_edges: tuple[float, ...]
    histogram: list[int]         # len(range_edges) bins, last is unbounded
    threshold: float
    flagged: list[int]
    normalized: bool = False
    unsuitable_standards: list[int] = field(default_factory=list)


def build_resource_curves(series: list[MachineSeries]) -> list[ResourceCurve]:
    """One (n, 3) cpu/mem/disk curve per machine, machine order preserved."""
    return [
        ResourceCurve(s.machine, np.column_stack(
            (s.server_cpu, s.server_mem, s.server_disk)))
        for s in series
    ]


def _as_points(curve) -> np.ndarray:
    points = curve.points if isinstance(curve, ResourceCurve) else np.asarray(curve, float)
    points = np.asarray(points, float)
    if points.ndim == 1:
        points = points[:, None]
    if points.ndim != 2 or len(points) == 0:
        raise ValueError("curve must be a non-empty sequence of points")
    return points


def _cost_matrix(qp: np.ndarray, sp: np.ndarray) -> np.ndarray:
    diff = qp[:, None, :] - sp[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _accumulate_small(cost: np.ndarray) -> np.ndarray:
    rows = cost.tolist()
    n = len(rows)
    l = len(rows[0])
    for j in range(1, l):
        rows[0][j] += rows[0][j - 1]
    for i in range(1, n):
        prev = rows[i - 1]
        cur = rows[i]
        cur[0] += prev[0]
        for j in range(1, l):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] += best
    return np.array(rows)


def _accumulate_large(cost: np.ndarray) -> np.ndarray:
    """Anti-diagonal sweep; every cell sees the same three predecessors as the
    scalar DP, so the result is bit-identical to _accumulate_small."""
    n, l = cost.shape
    acc = np.empty_like(cost)
    acc[0, :] = np.cumsum(cost[0, :])
    acc[:, 0] = np.cumsum(cost[:, 0])
    for d in range(2, n + l - 1):
        i0 = max(1, d - l + 1)
        i1 = min(n - 1, d - 1)
        if i0 > i1:
            continue
        i = np.arange(i0, i1 + 1)
        j = d - i
        best = np.minimum(acc[i - 1, j - 1], acc[i - 1, j])
        np.minimum(best, acc[i, j - 1], out=best)
        acc[i, j] = cost[i, j] + best
    return acc


def _path_length(acc: np.ndarray) -> int:
    i = acc.shape[0] - 1
    j = acc.shape[1] - 1
    k = 1
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = acc[i - 1, j - 1]
            if diag <= acc[i - 1, j] and diag <= acc[i, j - 1]:
                i -= 1
                j -= 1
            elif acc[i - 1, j] <= acc[i, j - 1]:
                i -= 1
            else:
                j -= 1
        k += 1
    return k


def dtw_distance(q, s) -> DtwResult:
    """Cumulative DTW cost between two curves plus an optimal path length.

    Accepts ResourceCurve or any array-like of points; scalar series are
    treated as 1-vectors. The alignment is unconstrained (no warping window).
    """
    qp = _as_points(q)
    sp = _as_points(s)
    if qp.shape[1] != sp.shape[1]:
        raise ValueError(f"curves disagree on dimensionality: "
                         f"{qp.shape[1]} vs {sp.shape[1]}")
    cost = _cost_matrix(qp, sp)
    if cost.size <= _SMALL_DTW_CELLS:
        acc = _accumulate_small(cost)
    else:
        acc = _accumulate_large(cost)
    machine = q.machine if isinstance(q, ResourceCurve) else -1
    return DtwResult(machine, float(acc[-1, -1]), _path_length(acc))


def normalized_distance(result: DtwResult) -> float:
    """Path-length-normalized form: sqrt(cumulative cost) / K."""
    return float(np.sqrt(result.distance)) / result.path_length


def select_standard(curves: list[ResourceCurve], sample_num: int, seed: int,
                    standard_count: int = 4,
                    standard_machines: list[int] | None = None,
                    ) -> tuple[float, list[ResourceCurve]]:
    """Baseline distance and standard curves.

    Samples ``sample_num`` curves without replacement (seeded), computes all
    pairwise DTW distances inside the sample, and takes their median as the
    baseline. ``standard_count`` of the sampled curves are then drawn as the
    standards. Passing ``standard_machines`` pins the sample to those machine
    ids instead (all of them become standards).
    """
    if not curves:
        raise ValueError("no curves to sample from")
    if standard_machines is not None:
        by_machine = {c.machine: c for c in curves}
        missing = [m for m in standard_machines if m not in by_machine]
        if missing:
            raise ValueError(f"standard machines not present: {missing}")
        sample = [by_machine[m] for m in standard_machines]
        standards = list(sample)
    else:
        if sample_num < 2:
            raise ValueError(f"sample_num must be >= 2, got {sample_num}")
        if sample_num > len(curves):
            raise ValueError(
                f"sample_num {sample_num} exceeds curve count {len(curves)}")
        if not 1 <= standard_count <= sample_num:
            raise ValueError(f"standard_count must be in [1, sample_num], "
                             f"got {standard_count}")
        rng = np.random.default_rng(seed)
        order = sorted(curves, key=lambda c: c.machine)
        picks = rng.choice(len(order), size=sample_num, replace=False)
        sample = [order[int(i)] for i in np.sort(picks)]
        chosen = rng.choice(sample_num, size=standard_count, replace=False)
        standards = [sample[int(i)] for i in np.sort(chosen)]
    if len(sample) < 2:
        raise ValueError("need at least 2 sampled curves for a pairwise median")
    pair_values = [
        dtw_distance(sample[a], sample[b]).distance
        for a in range(len(sample)) for b in range(a + 1, len(sample))
    ]
    return float(np.median(pair_values)), standards


def score_similarity(curves: list[ResourceCurve],
                     standard_curves: list[ResourceCurve],
                     standard_value: float = 0.0,
                     threshold: float = DEFAULT_THRESHOLD,
                     range_edges: tuple[float, ...] = DEFAULT_RANGE_EDGES,
                     normalized: bool = False,
                     suitability_gap: float | None = None) -> DtwReport:
    """Distance of every machine to every standard curve.

    Flags machines whose mean distance exceeds the threshold. The histogram
    buckets mean distances into [e0,e1), [e1,e2), ..., [e_last, inf). With
    ``normalized`` the sqrt/path-length form is used everywhere (pick the
    threshold accordingly). ``suitability_gap`` enables a warning for any
    standard whose sorted distance profile sits further than the gap (in sup
    norm) from every other standard's profile.
    """
    if not standard_curves:
        raise ValueError("need at least one standard curve")
    if len(range_edges) < 1 or list(range_edges) != sorted(range_edges):
        raise ValueError(f"range edges must be sorted, got {range_edges}")
    ordered = sorted(curves, key=lambda c: c.machine)
    machines = [c.machine for c in ordered]
    distances = np.empty((len(ordered), len(standard_curves)))
    for i, curve in enumerate(ordered):
        for j, std in enumerate(standard_curves):
            result = dtw_distance(curve, std)
            distances[i, j] = (normalized_distance(result) if normalized
                               else result.distance)
    mean_distance = distances.mean(axis=1)

    histogram = [0] * len(range_edges)
    for value in mean_distance:
        slot = int(np.searchsorted(range_edges, value, side="right")) - 1
        if slot >= 0:
            histogram[slot] += 1
    flagged = [m for m, v in zip(machines, mean_distance) if v > threshold]

    unsuitable: list[int] = []
    if suitability_gap is not None and len(standard_curves) >= 2:
        profiles = np.sort(distances, axis=0)
        for j in range(len(standard_curves)):
            gaps = [
                float(np.max(np.abs(profiles[:, j] - profiles[:, o])))
                for o in range(len(standard_curves)) if o != j
            ]
            if min(gaps) > suitability_gap:
                unsuitable.append(standard_curves[j].machine)

    return DtwReport(
        standard_value=standard_value,
        standard_machines=[c.machine for c in standard_curves],
        machines=machines,
        distances=distances,
        mean_distance=mean_distance,
        range_edges=tuple(float(e) for e in range_edges),
        histogram=histogram,
        threshold=threshold,
        flagged=flagged,
        normalized=normalized,
        unsuitable_standards=unsuitable,
    )


# ---------------------------------------------------------------------------
# artifact I/O

DISTANCES_HEADER_PREFIX = ("machine",)


def write_distances_csv(report: DtwReport, path: str) -> None:
    header = list(DISTANCES_HEADER_PREFIX)
    header += [f"dtw_std_{m}" for m in report.standard_machines]
    header.append("dtw_mean")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, machine in enumerate(report.machines):
            row = [machine]
            row += [float_text(float(v)) for v in report.distances[i]]
            row.append(float_text(float(report.mean_distance[i])))
            writer.writerow(row)


def write_flags_csv(report: DtwReport, path: str) -> None:
    flagged = set(report.flagged)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("machine", "dtw_mean", "flagged"))
        for machine, value in zip(report.machines, report.mean_distance):
            writer.writerow([machine, float_text(float(value)),
                             int(machine in flagged)])


def histogram_dict(report: DtwReport) -> dict:
    edges = report.range_edges
    bins = []
    for i, count in enumerate(report.histogram):
        hi = edges[i + 1] if i + 1 < len(edges) else None
        bins.append({"lo": edges[i], "hi": hi, "count": count})
    return {
        "standard_value": report.standard_value,
        "standard_machines": report.standard_machines,
        "threshold": report.threshold,
        "normalized": report.normalized,
        "bins": bins,
        "flagged": list(report.flagged),
        "flagged_count": len(report.flagged),
        "machine_count": len(report.machines),
        "unsuitable_standards": report.unsuitable_standards,
    }


def write_histogram_json(report: DtwReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(histogram_dict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
