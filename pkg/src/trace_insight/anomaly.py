"""Isolation-forest scoring over per-machine resource features, with
rule-based cause tags for the machines that stand out.

Features are the five per-machine signals (cpu, mem, disk, batch count,
container count). The forest follows the classic construction: t trees, each
on a seeded subsample of up to psi rows, random split dimension and split
value per node, growth stopped at ceil(log2 psi). Scores are reported as
0.5 - 2^(-E(h)/c(psi)), so anomalous machines land below zero and everything
lives in [-0.5, 0.5).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .aggregate import MachineSeries
from .trace_model import IntervalGrid, MachineEvent, MachineEventType, float_text

EULER_GAMMA = 0.5772156649

FEATURE_NAMES = ("cpu", "mem", "disk", "batch_count", "container_count")


class FeatureMode(Enum):
    PER_MACHINE_MEAN = "per_machine_mean"
    PER_INTERVAL = "per_interval"


class CauseTag(Enum):
    FREQUENT_SOFT_ERROR = "FrequentSoftError"
    SOFT_ERROR_WORKLOAD_STOP = "SoftErrorWorkloadStop"
    NO_WORKLOADS_SCHEDULING = "NoWorkloadsScheduling"
    NO_ONLINE_SERVICES = "NoOnlineServices"
    NO_BATCH_JOBS = "NoBatchJobs"
    HEAVIER_ONLINE_SERVICES = "HeavierOnlineServices"
    UNBALANCED_LIGHTER_ONLINE = "UnbalancedLighterOnline"


@dataclass(frozen=True, slots=True)
class _Split:
    dim: int
    value: float
    left: "_Split | _Leaf"
    right: "_Split | _Leaf"


@dataclass(frozen=True, slots=True)
class _Leaf:
    size: int


@dataclass
class IsolationForestModel:
    tree_count: int
    subsample_size: int
    depth_limit: int
    trees: list
    seed: int
    trained_rows: int


@dataclass
class AnomalyReport:
    machines: list[int]
    scores: dict[int, float]
    ranking: list[int]           # ascending score, ties by machine id
    negative_count: int
    causes: dict[int, list[str]] = field(default_factory=dict)
    labels: dict[int, str] = field(default_factory=dict)


def average_path_length(n: int) -> float:
    """Expected unsuccessful-search path length in a BST of n points; the
    harmonic number is estimated as ln(m) + Euler's constant."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


def build_feature_matrix(series: list[MachineSeries],
                         mode: FeatureMode = FeatureMode.PER_MACHINE_MEAN,
                         ) -> tuple[list[int], np.ndarray]:
    """Feature rows in ascending machine order.

    PER_MACHINE_MEAN: one row per machine (interval means). PER_INTERVAL:
    one row per (machine, interval); rows of one machine stay contiguous so
    the machine ids list repeats accordingly.
    """
    ordered = sorted(series, key=lambda s: s.machine)
    machines: list[int] = []
    rows: list[np.ndarray] = []
    for s in ordered:
        stacked = np.column_stack((
            s.server_cpu, s.server_mem, s.server_disk,
            s.batch_count, s.container_count,
        )).astype(float)
        if mode is FeatureMode.PER_MACHINE_MEAN:
            machines.append(s.machine)
            rows.append(stacked.mean(axis=0))
        else:
            machines.extend([s.machine] * len(stacked))
            rows.extend(stacked)
    return machines, np.asarray(rows)


def zscore_normalize(matrix: np.ndarray) -> np.ndarray:
    """Optional per-dimension standardization (constant dimensions pass
    through unchanged); iForest splits are scale-sensitive across features."""
    mean = matrix.mean(axis=0)
    std = matrix.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (matrix - mean) / std


def _grow(points: np.ndarray, depth: int, limit: int,
          rng: np.random.Generator):
    n = len(points)
    if n <= 1 or depth >= limit:
        return _Leaf(n)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    splittable = np.flatnonzero(hi > lo)
    if len(splittable) == 0:
        return _Leaf(n)
    dim = int(splittable[rng.integers(len(splittable))])
    value = float(rng.uniform(lo[dim], hi[dim]))
    mask = points[:, dim] < value
    if not mask.any() or mask.all():
        return _Leaf(n)
    return _Split(dim, value,
                  _grow(points[mask], depth + 1, limit, rng),
                  _grow(points[~mask], depth + 1, limit, rng))


def iforest_fit(matrix: np.ndarray, tree_count: int = 100,
                subsample: int = 256, seed: int = 0) -> IsolationForestModel:
    """Forest of seeded random isolation trees.

    Each tree draws its own subsample of min(subsample, n) rows without
    replacement; per-tree RNGs derive from (seed, tree index) so the forest
    is reproducible and trees are independent.
    """
    matrix = np.asarray(matrix, float)
    if matrix.ndim != 2 or len(matrix) < 2:
        raise ValueError("need a matrix with at least 2 rows")
    if tree_count < 1:
        raise ValueError(f"tree_count must be >= 1, got {tree_count}")
    if subsample < 2:
        raise ValueError(f"subsample must be >= 2, got {subsample}")
    psi = min(subsample, len(matrix))
    limit = math.ceil(math.log2(psi))
    trees = []
    for t in range(tree_count):
        rng = np.random.default_rng((seed, t))
        picks = rng.choice(len(matrix), size=psi, replace=False)
        trees.append(_grow(matrix[picks], 0, limit, rng))
    return IsolationForestModel(
        tree_count=tree_count, subsample_size=psi, depth_limit=limit,
        trees=trees, seed=seed, trained_rows=len(matrix),
    )


def _path_length(tree, row: np.ndarray) -> float:
    depth = 0
    node = tree
    while isinstance(node, _Split):
        node = node.left if row[node.dim] < node.value else node.right
        depth += 1
    return depth + average_path_length(node.size)


def iforest_scores(model: IsolationForestModel, matrix: np.ndarray) -> np.ndarray:
    """Shifted anomaly score per row: 0.5 - 2^(-E(h)/c(psi)), in [-0.5, 0.5)."""
    matrix = np.asarray(matrix, float)
    norm = average_path_length(model.subsample_size)
    if norm <= 0:
        raise ValueError("subsample too small to normalize path lengths")
    scores = np.empty(len(matrix))
    for i, row in enumerate(matrix):
        mean_path = sum(_path_length(tree, row) for tree in model.trees)
        mean_path /= model.tree_count
        scores[i] = 0.5 - 2.0 ** (-mean_path / norm)
    return scores


def score_machines(model: IsolationForestModel, machines: list[int],
                   matrix: np.ndarray,
                   mode: FeatureMode = FeatureMode.PER_MACHINE_MEAN,
                   ) -> AnomalyReport:
    """Per-machine report; PER_INTERVAL collapses a machine's row scores by
    taking the minimum (its most anomalous interval)."""
    raw = iforest_scores(model, matrix)
    per_machine: dict[int, float] = {}
    for machine, value in zip(machines, raw):
        value = float(value)
        if mode is FeatureMode.PER_INTERVAL:
            prev = per_machine.get(machine)
            per_machine[machine] = value if prev is None else min(prev, value)
        else:
            if machine in per_machine:
                raise ValueError(f"duplicate rows for machine {machine}")
            per_machine[machine] = value
    ranking = sorted(per_machine, key=lambda m: (per_machine[m], m))
    return AnomalyReport(
        machines=sorted(per_machine),
        scores=per_machine,
        ranking=ranking,
        negative_count=sum(1 for v in per_machine.values() if v < 0),
    )


def rank_anomalies(report: AnomalyReport, top_n: int) -> list[int]:
    if top_n < 0:
        raise ValueError(f"top_n must be >= 0, got {top_n}")
    return report.ranking[:top_n]


@dataclass(frozen=True, slots=True)
class PopulationStats:
    """Medians of the per-machine mean counts, shared by all diagnoses."""

    container_count_median: float
    batch_count_median: float


def population_stats(series: list[MachineSeries]) -> PopulationStats:
    return PopulationStats(
        container_count_median=float(np.median(
            [np.mean(s.container_count) for s in series])),
        batch_count_median=float(np.median(
            [np.mean(s.batch_count) for s in series])),
    )


def _batch_stop_index(batch_count: np.ndarray) -> int | None:
    """Interval index where batch activity stops for good, or None when the
    machine never ran batch or still runs it at the end."""
    active = np.flatnonzero(np.asarray(batch_count) > 0)
    if len(active) == 0 or active[-1] == len(batch_count) - 1:
        return None
    return int(active[-1]) + 1


def diagnose(machine: int, label: str, events: list[MachineEvent],
             series: MachineSeries, stats: PopulationStats,
             grid: IntervalGrid, heavier_factor: float = 1.5) -> list[str]:
    """Cause tags for one machine, in a fixed rule order.

    Rules depend only on the machine's own events/series plus the population
    medians, so the result is independent of evaluation order. Several tags
    can apply at once.
    """
    softerrors = [ev for ev in events
                  if ev.machine == machine
                  and ev.event_type is MachineEventType.SOFT_ERROR]
    tags: list[str] = []

    if len(softerrors) >= 3:
        tags.append(CauseTag.FREQUENT_SOFT_ERROR.value)

    stop = _batch_stop_index(series.batch_count)
    if stop is not None and softerrors:
        for ev in softerrors:
            x = grid.interval_index(ev.timestamp)
            if x is not None and abs(x - stop) <= 1:
                tags.append(CauseTag.SOFT_ERROR_WORKLOAD_STOP.value)
                break

    if label == "Type2" and not softerrors:
        tags.append(CauseTag.NO_WORKLOADS_SCHEDULING.value)
    if label == "Type3":
        tags.append(CauseTag.NO_ONLINE_SERVICES.value)
    if label == "Type4":
        tags.append(CauseTag.NO_BATCH_JOBS.value)

    if label == "Type1":
        container_mean = float(np.mean(series.container_count))
        batch_mean = float(np.mean(series.batch_count))
        if container_mean >= heavier_factor * stats.container_count_median:
            tags.append(CauseTag.HEAVIER_ONLINE_SERVICES.value)
        if container_mean <= 1.0 and batch_mean >= stats.batch_count_median:
            tags.append(CauseTag.UNBALANCED_LIGHTER_ONLINE.value)
    return tags


# ---------------------------------------------------------------------------
# artifact I/O


def write_scores_csv(report: AnomalyReport, path: str) -> None:
    rank_of = {m: i + 1 for i, m in enumerate(report.ranking)}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("machine", "score", "rank", "label", "tags"))
        for machine in report.machines:
            writer.writerow([
                machine,
                float_text(report.scores[machine]),
                rank_of[machine],
                report.labels.get(machine, ""),
                "|".join(report.causes.get(machine, [])),
            ])


def top_anomalies_dict(report: AnomalyReport, top_n: int) -> dict:
    entries = []
    for i, machine in enumerate(rank_anomalies(report, top_n)):
        entries.append({
            "rank": i + 1,
            "machine": machine,
            "score": report.scores[machine],
            "category": report.labels.get(machine, ""),
            "causes": report.causes.get(machine, []),
        })
    return {
        "negative_count": report.negative_count,
        "machine_count": len(report.machines),
        "top": entries,
    }


def write_anomaly_json(report: AnomalyReport, top_n: int, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(top_anomalies_dict(report, top_n), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_score_distribution_csv(report: AnomalyReport, path: str) -> None:
    """Scores in ranking order, for plotting the score curve."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("rank", "machine", "score"))
        for i, machine in enumerate(report.ranking):
            writer.writerow([i + 1, machine, float_text(report.scores[machine])])
