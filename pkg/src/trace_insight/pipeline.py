"""Stage orchestration: flat key=value configs, per-stage run manifests, and
the synth / preprocess / analyze / report pipeline behind the CLI.

Every stage reads its inputs from disk, writes its artifacts into the output
directory, and drops a manifest-<stage>.json recording the config snapshot,
input and output digests, row counts, and the tool version; no timestamps,
so reruns of the same config are byte-identical. Stages never touch another
stage's files. All randomness comes from seeds named in the config; a
missing seed is an error, never a fallback to wall-clock entropy.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os

import numpy as np

from . import __version__
from .aggregate import (
    AggDiagnostics,
    aggregate_batch_usage,
    aggregate_container_usage,
    build_machine_series,
    write_batch_agg_csv,
    write_container_agg_csv,
    write_machine_series_csv,
)
from .anomaly import (
    FeatureMode,
    build_feature_matrix,
    diagnose,
    iforest_fit,
    population_stats,
    rank_anomalies,
    score_machines,
    top_anomalies_dict,
    write_anomaly_json,
    write_score_distribution_csv,
    write_scores_csv,
    zscore_normalize,
)
from .classify import (
    LabelThresholds,
    category_report,
    counts_dict,
    kmeans_fit,
    label_clusters,
    occupancy_matrix,
    write_assignments_csv,
    write_counts_json,
    write_type_usage_csv,
)
from .preprocess import (
    filter_container_events,
    read_dense_csv,
    supplement_server_usage,
    write_dense_csv,
    write_repair_log_csv,
)
from .similarity import (
    DEFAULT_RANGE_EDGES,
    build_resource_curves,
    histogram_dict,
    score_similarity,
    select_standard,
    write_distances_csv,
    write_flags_csv,
    write_histogram_json,
)
from .synth import (
    AnomalyPlant,
    GapPlant,
    PlantKind,
    SynthConfig,
    write_synthetic_trace,
)
from .trace_model import (
    DEFAULT_FILENAMES,
    IntervalGrid,
    TraceParseError,
    parse_trace_dir,
)

REPORT_SCHEMA_VERSION = 1

DENSE_FILENAME = "dense_usage.csv"
REPAIR_LOG_FILENAME = "repair_log.csv"
REMOVED_EVENTS_FILENAME = "removed_container_events.csv"
REPORT_FILENAME = "report.json"

ANALYZE_FILENAMES = (
    "container_usage_agg.csv", "batch_usage_agg.csv", "machine_series.csv",
    "dtw_distances.csv", "dtw_flags.csv", "dtw_histogram.json",
    "assignments.csv", "category_counts.json", "plot_type_usage.csv",
    "anomaly_scores.csv", "anomaly_report.json", "plot_score_distribution.csv",
)


class StageError(Exception):
    """Pipeline failure attributed to one stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage
        self.message = message

    def __str__(self) -> str:
        return f"[{self.stage}] {self.message}"


# ---------------------------------------------------------------------------
# config handling

_DEFAULTS = {
    "grid_start": "39600",
    "grid_end": "82500",
    "grid_step": "300",
    "has_header": "false",
    "schema_profile": "default",
    "max_skip_ratio": "0.01",
    "duration_weighted": "false",
    "dtw_sample_num": "8",
    "dtw_standard_count": "4",
    "dtw_standards": "",
    "dtw_threshold": "3.0",
    "dtw_normalized": "false",
    "dtw_range_edges": "0,1,2,3,5",
    "dtw_suitability_gap": "1.0",
    "classify_k": "8",
    "classify_max_iter": "100",
    "classify_restarts": "10",
    "classify_always": "0.90",
    "classify_none": "0.05",
    "classify_gap_fraction": "0.25",
    "anomaly_trees": "100",
    "anomaly_subsample": "256",
    "anomaly_mode": "per_machine_mean",
    "anomaly_top_n": "25",
    "anomaly_normalize": "false",
    "anomaly_heavier_factor": "1.5",
    "synth_noise": "0.0",
    "synth_plants": "",
    "synth_gaps": "",
}

_SEED_KEYS = ("dtw_seed", "classify_seed", "anomaly_seed", "synth_seed")

KNOWN_KEYS = frozenset(_DEFAULTS) | frozenset(_SEED_KEYS) | {
    "input_dir", "output_dir",
    "synth_machines", "synth_quotas",
}


def parse_config_file(path: str) -> dict[str, str]:
    config: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise StageError(
                        "config", f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                key = key.strip()
                if key not in KNOWN_KEYS:
                    raise StageError("config", f"{path}:{lineno}: unknown key {key!r}")
                config[key] = value.strip()
    except OSError as e:
        raise StageError("config", f"cannot read config file: {e}") from e
    return config


def apply_overrides(config: dict[str, str], overrides: list[str]) -> dict[str, str]:
    merged = dict(config)
    for item in overrides:
        if "=" not in item:
            raise StageError("config", f"override must be key=value, got {item!r}")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in KNOWN_KEYS:
            raise StageError("config", f"unknown override key {key!r}")
        merged[key] = value.strip()
    return merged


def _get(config: dict[str, str], key: str, stage: str) -> str:
    if key in config:
        return config[key]
    if key in _DEFAULTS:
        return _DEFAULTS[key]
    hint = " (seeds must be explicit)" if key in _SEED_KEYS else ""
    raise StageError(stage, f"missing required config key {key!r}{hint}")


def _get_int(config, key, stage) -> int:
    raw = _get(config, key, stage)
    try:
        return int(raw)
    except ValueError:
        raise StageError(stage, f"config key {key!r} must be an integer, "
                                f"got {raw!r}") from None


def _get_float(config, key, stage) -> float:
    raw = _get(config, key, stage)
    try:
        return float(raw)
    except ValueError:
        raise StageError(stage, f"config key {key!r} must be a number, "
                                f"got {raw!r}") from None


def _get_bool(config, key, stage) -> bool:
    raw = _get(config, key, stage).lower()
    if raw in ("true", "1", "yes"):
        return True
    if raw in ("false", "0", "no"):
        return False
    raise StageError(stage, f"config key {key!r} must be true/false, got {raw!r}")


def _int_list(raw: str) -> list[int]:
    return [int(part) for part in raw.split(",") if part.strip() != ""]


def _float_list(raw: str) -> list[float]:
    return [float(part) for part in raw.split(",") if part.strip() != ""]


def _grid(config, stage) -> IntervalGrid:
    try:
        return IntervalGrid(_get_int(config, "grid_start", stage),
                            _get_int(config, "grid_end", stage),
                            _get_int(config, "grid_step", stage))
    except ValueError as e:
        raise StageError(stage, f"bad grid: {e}") from e


# ---------------------------------------------------------------------------
# manifests

def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: str, stage: str, config: dict[str, str],
                   inputs: dict[str, str], outputs: list[str],
                   row_counts: dict[str, int]) -> None:
    manifest = {
        "stage": stage,
        "tool_version": __version__,
        "config": dict(sorted(config.items())),
        "inputs": inputs,
        "outputs": {name: _sha256(os.path.join(out_dir, name))
                    for name in sorted(outputs)},
        "row_counts": row_counts,
    }
    path = os.path.join(out_dir, f"manifest-{stage}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _digest_inputs(input_dir: str, stage: str) -> dict[str, str]:
    digests = {}
    for name in sorted(DEFAULT_FILENAMES.values()):
        path = os.path.join(input_dir, name)
        if not os.path.exists(path):
            raise StageError(stage, f"missing input file {path}")
        digests[name] = _sha256(path)
    return digests


# ---------------------------------------------------------------------------
# stage: synth

def _parse_plants(raw: str, stage: str) -> tuple[AnomalyPlant, ...]:
    """Parse 'Kind:machine[:key=val,...]' items separated by ';'."""
    plants = []
    kinds = {kind.value: kind for kind in PlantKind}
    for item in filter(None, (part.strip() for part in raw.split(";"))):
        pieces = item.split(":")
        if len(pieces) < 2:
            raise StageError(stage, f"plant must be Kind:machine, got {item!r}")
        kind_name, machine = pieces[0], pieces[1]
        if kind_name not in kinds:
            raise StageError(stage, f"unknown plant kind {kind_name!r} "
                                    f"(expected one of {sorted(kinds)})")
        params = []
        if len(pieces) > 2:
            for pair in pieces[2].split(","):
                if "=" not in pair:
                    raise StageError(stage, f"bad plant param {pair!r}")
                name, value = pair.split("=", 1)
                params.append((name.strip(), float(value)))
        try:
            plants.append(AnomalyPlant(machine=int(machine),
                                       kind=kinds[kind_name],
                                       params=tuple(params)))
        except ValueError as e:
            raise StageError(stage, f"bad plant {item!r}: {e}") from e
    return tuple(plants)


def _parse_gaps(raw: str, stage: str) -> tuple[GapPlant, ...]:
    """Parse 'machine:metric:lo-hi' items (inclusive slot range) separated
    by ';'."""
    gaps = []
    for item in filter(None, (part.strip() for part in raw.split(";"))):
        pieces = item.split(":")
        if len(pieces) != 3:
            raise StageError(stage, f"gap must be machine:metric:lo-hi, got {item!r}")
        machine, metric, span = pieces
        try:
            if "-" in span:
                lo, hi = span.split("-", 1)
                slots = tuple(range(int(lo), int(hi) + 1))
            else:
                slots = (int(span),)
            gaps.append(GapPlant(machine=int(machine), metric=metric, slots=slots))
        except ValueError as e:
            raise StageError(stage, f"bad gap {item!r}: {e}") from e
    return tuple(gaps)


def run_synth(config: dict[str, str]) -> str:
    stage = "synth"
    out_dir = _get(config, "output_dir", stage)
    grid = _grid(config, stage)
    quotas = tuple(_int_list(_get(config, "synth_quotas", stage)))
    synth_config = SynthConfig(
        machine_count=_get_int(config, "synth_machines", stage),
        grid=grid,
        quotas=quotas,
        seed=_get_int(config, "synth_seed", stage),
        noise_level=_get_float(config, "synth_noise", stage),
        anomaly_plants=_parse_plants(_get(config, "synth_plants", stage), stage),
        gap_plants=_parse_gaps(_get(config, "synth_gaps", stage), stage),
    )
    try:
        bundle, truth = write_synthetic_trace(synth_config, out_dir)
    except ValueError as e:
        raise StageError(stage, str(e)) from e
    outputs = sorted(DEFAULT_FILENAMES.values()) + ["ground_truth.json"]
    write_manifest(out_dir, stage, config, inputs={}, outputs=outputs,
                   row_counts={
                       "machines": bundle.machine_count,
                       "server_events": len(bundle.events),
                       "server_usage": len(bundle.server_usage),
                       "container_events": len(bundle.container_events),
                       "container_usage": len(bundle.container_usage),
                       "batch_tasks": len(bundle.batch_tasks),
                       "batch_instances": len(bundle.batch_instances),
                       "planted_anomalies": len(truth.anomalies),
                       "planted_gaps": len(truth.gaps),
                   })
    return out_dir


# ---------------------------------------------------------------------------
# stage: preprocess

def _load_bundle(config: dict[str, str], stage: str):
    input_dir = _get(config, "input_dir", stage)
    try:
        return parse_trace_dir(
            input_dir,
            schema_profile=_get(config, "schema_profile", stage),
            has_header=_get_bool(config, "has_header", stage),
            max_skip_ratio=_get_float(config, "max_skip_ratio", stage),
        ), input_dir
    except TraceParseError as e:
        raise StageError(stage, str(e)) from e


def run_preprocess(config: dict[str, str]) -> str:
    stage = "preprocess"
    out_dir = _get(config, "output_dir", stage)
    grid = _grid(config, stage)
    (bundle, input_dir) = _load_bundle(config, stage)
    os.makedirs(out_dir, exist_ok=True)
    try:
        dense, annotations = supplement_server_usage(bundle, grid)
        clean, removed = filter_container_events(bundle.container_events)
    except ValueError as e:
        raise StageError(stage, str(e)) from e
    write_dense_csv(dense, os.path.join(out_dir, DENSE_FILENAME))
    write_repair_log_csv(annotations, os.path.join(out_dir, REPAIR_LOG_FILENAME))
    with open(os.path.join(out_dir, REMOVED_EVENTS_FILENAME), "w",
              encoding="utf-8", newline="") as fh:
        fh.write("instance,machine,mem_req\n")
        for ev in removed:
            fh.write(f"{ev.instance},{ev.machine},{ev.mem_req!r}\n")
    method_counts: dict[str, int] = {}
    for note in annotations:
        method_counts[note.method.value] = method_counts.get(note.method.value, 0) + 1
    write_manifest(out_dir, stage, config,
                   inputs=_digest_inputs(input_dir, stage),
                   outputs=[DENSE_FILENAME, REPAIR_LOG_FILENAME,
                            REMOVED_EVENTS_FILENAME],
                   row_counts={
                       "machines": bundle.machine_count,
                       "server_usage": len(bundle.server_usage),
                       "dense_machines": len(dense.machines),
                       "repair_annotations": len(annotations),
                       "container_events": len(bundle.container_events),
                       "container_events_removed": len(removed),
                       **{f"repairs_{name}": count
                          for name, count in sorted(method_counts.items())},
                   })
    return out_dir


# ---------------------------------------------------------------------------
# stage: analyze

def _feature_mode(config, stage) -> FeatureMode:
    raw = _get(config, "anomaly_mode", stage)
    for mode in FeatureMode:
        if mode.value == raw:
            return mode
    raise StageError(stage, f"anomaly_mode must be one of "
                            f"{[m.value for m in FeatureMode]}, got {raw!r}")


def run_analyze(config: dict[str, str]) -> str:
    stage = "analyze"
    out_dir = _get(config, "output_dir", stage)
    grid = _grid(config, stage)
    (bundle, input_dir) = _load_bundle(config, stage)
    os.makedirs(out_dir, exist_ok=True)

    inputs = _digest_inputs(input_dir, stage)
    dense_path = os.path.join(out_dir, DENSE_FILENAME)
    try:
        clean, _removed = filter_container_events(bundle.container_events)
        bundle = dataclasses.replace(bundle, container_events=clean)
        if os.path.exists(dense_path):
            dense = read_dense_csv(dense_path)
            inputs[DENSE_FILENAME] = _sha256(dense_path)
            if list(dense.timestamps) != list(grid.timestamps()):
                raise StageError(stage, f"{DENSE_FILENAME} disagrees with the "
                                        "configured grid; rerun preprocess")
        else:
            dense, _notes = supplement_server_usage(bundle, grid)

        diag = AggDiagnostics()
        container_aggs = aggregate_container_usage(bundle, grid, diag)
        batch_aggs = aggregate_batch_usage(
            bundle, grid, diag,
            duration_weighted=_get_bool(config, "duration_weighted", stage))
        series = build_machine_series(bundle, grid, dense,
                                      container_aggs, batch_aggs)
        write_container_agg_csv(container_aggs,
                                os.path.join(out_dir, "container_usage_agg.csv"))
        write_batch_agg_csv(batch_aggs,
                            os.path.join(out_dir, "batch_usage_agg.csv"))
        write_machine_series_csv(series, grid,
                                 os.path.join(out_dir, "machine_series.csv"))

        # similarity
        curves = build_resource_curves(series)
        raw_standards = _int_list(_get(config, "dtw_standards", stage))
        standard_value, standards = select_standard(
            curves,
            sample_num=_get_int(config, "dtw_sample_num", stage),
            seed=_get_int(config, "dtw_seed", stage),
            standard_count=_get_int(config, "dtw_standard_count", stage),
            standard_machines=raw_standards or None,
        )
        edges = tuple(_float_list(_get(config, "dtw_range_edges", stage))) \
            or DEFAULT_RANGE_EDGES
        gap_raw = _get(config, "dtw_suitability_gap", stage)
        dtw_report = score_similarity(
            curves, standards, standard_value=standard_value,
            threshold=_get_float(config, "dtw_threshold", stage),
            range_edges=edges,
            normalized=_get_bool(config, "dtw_normalized", stage),
            suitability_gap=float(gap_raw) if gap_raw.strip() else None,
        )
        write_distances_csv(dtw_report, os.path.join(out_dir, "dtw_distances.csv"))
        write_flags_csv(dtw_report, os.path.join(out_dir, "dtw_flags.csv"))
        write_histogram_json(dtw_report, os.path.join(out_dir, "dtw_histogram.json"))

        # classification
        machines, matrix = occupancy_matrix(series)
        model = kmeans_fit(machines, matrix,
                           k=_get_int(config, "classify_k", stage),
                           seed=_get_int(config, "classify_seed", stage),
                           max_iter=_get_int(config, "classify_max_iter", stage),
                           n_init=_get_int(config, "classify_restarts", stage))
        thresholds = LabelThresholds(
            always=_get_float(config, "classify_always", stage),
            none=_get_float(config, "classify_none", stage),
            gap_fraction=_get_float(config, "classify_gap_fraction", stage))
        model = label_clusters(model, thresholds)
        cat_report = category_report(model, series)
        write_assignments_csv(model, os.path.join(out_dir, "assignments.csv"))
        write_counts_json(model, cat_report,
                          os.path.join(out_dir, "category_counts.json"))
        write_type_usage_csv(cat_report, series,
                             os.path.join(out_dir, "plot_type_usage.csv"))

        # anomaly
        mode = _feature_mode(config, stage)
        feat_machines, feat_matrix = build_feature_matrix(series, mode)
        if _get_bool(config, "anomaly_normalize", stage):
            feat_matrix = zscore_normalize(feat_matrix)
        forest = iforest_fit(feat_matrix,
                             tree_count=_get_int(config, "anomaly_trees", stage),
                             subsample=_get_int(config, "anomaly_subsample", stage),
                             seed=_get_int(config, "anomaly_seed", stage))
        anomaly_report = score_machines(forest, feat_machines, feat_matrix, mode)
        labels = {m: model.labels[model.assignments[m]] for m in model.machines}
        anomaly_report.labels = labels
        stats = population_stats(series)
        events_by_machine: dict[int, list] = {}
        for ev in bundle.events:
            events_by_machine.setdefault(ev.machine, []).append(ev)
        series_by_machine = {s.machine: s for s in series}
        heavier = _get_float(config, "anomaly_heavier_factor", stage)
        anomaly_report.causes = {
            m: diagnose(m, labels.get(m, ""), events_by_machine.get(m, []),
                        series_by_machine[m], stats, grid,
                        heavier_factor=heavier)
            for m in anomaly_report.machines
        }
        top_n = _get_int(config, "anomaly_top_n", stage)
        write_scores_csv(anomaly_report, os.path.join(out_dir, "anomaly_scores.csv"))
        write_anomaly_json(anomaly_report, top_n,
                           os.path.join(out_dir, "anomaly_report.json"))
        write_score_distribution_csv(
            anomaly_report, os.path.join(out_dir, "plot_score_distribution.csv"))
    except StageError:
        raise
    except ValueError as e:
        raise StageError(stage, str(e)) from e

    write_manifest(out_dir, stage, config, inputs=inputs,
                   outputs=list(ANALYZE_FILENAMES),
                   row_counts={
                       "machines": len(series),
                       "intervals": grid.interval_count,
                       "curves": len(curves),
                       "standards": len(standards),
                       "clusters": model.k,
                       "flagged": len(dtw_report.flagged),
                       "scored": len(anomaly_report.machines),
                       "negative_scores": anomaly_report.negative_count,
                       "top_ranked": min(top_n, len(anomaly_report.ranking)),
                   })
    return out_dir


# ---------------------------------------------------------------------------
# stage: report

def _read_json(out_dir: str, name: str, stage: str) -> dict:
    path = os.path.join(out_dir, name)
    if not os.path.exists(path):
        raise StageError(stage, f"analyze stage missing: no {name} in {out_dir}")
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def build_report(out_dir: str) -> dict:
    stage = "report"
    histogram = _read_json(out_dir, "dtw_histogram.json", stage)
    categories = _read_json(out_dir, "category_counts.json", stage)
    anomalies = _read_json(out_dir, "anomaly_report.json", stage)

    preprocess_summary = None
    manifest_path = os.path.join(out_dir, "manifest-preprocess.json")
    if os.path.exists(manifest_path):
        with open(manifest_path, encoding="utf-8") as fh:
            rows = json.load(fh)["row_counts"]
        preprocess_summary = {
            "machines": rows.get("machines", 0),
            "repair_annotations": rows.get("repair_annotations", 0),
            "repairs": {
                key.removeprefix("repairs_"): value
                for key, value in rows.items() if key.startswith("repairs_")
            },
            "container_events_removed": rows.get("container_events_removed", 0),
        }

    analyze_manifest = _read_json(out_dir, "manifest-analyze.json", stage)
    grid_config = analyze_manifest["config"]
    machine_count = histogram["machine_count"]
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "grid": {
            "start": int(grid_config.get("grid_start", _DEFAULTS["grid_start"])),
            "end": int(grid_config.get("grid_end", _DEFAULTS["grid_end"])),
            "step": int(grid_config.get("grid_step", _DEFAULTS["grid_step"])),
            "interval_count": analyze_manifest["row_counts"]["intervals"],
        },
        "preprocess": preprocess_summary,
        "similarity": {
            "standard_value": histogram["standard_value"],
            "standard_machines": histogram["standard_machines"],
            "threshold": histogram["threshold"],
            "normalized": histogram["normalized"],
            "bins": histogram["bins"],
            "flagged": histogram.get("flagged", []),
            "flagged_count": histogram["flagged_count"],
            "flagged_fraction": (histogram["flagged_count"] / machine_count
                                 if machine_count else 0.0),
            "unsuitable_standards": histogram["unsuitable_standards"],
        },
        "classification": {
            "k": categories["k"],
            "counts": categories["counts"],
            "members": categories["members"],
            "usage_means": categories["usage_means"],
        },
        "anomalies": anomalies,
        "plot_data": {
            "type_usage": "plot_type_usage.csv",
            "score_distribution": "plot_score_distribution.csv",
            "machine_series": "machine_series.csv",
            "dtw_distances": "dtw_distances.csv",
        },
    }


def run_report(config: dict[str, str]) -> str:
    stage = "report"
    out_dir = _get(config, "output_dir", stage)
    report = build_report(out_dir)
    path = os.path.join(out_dir, REPORT_FILENAME)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out_dir, stage, config, inputs={}, outputs=[REPORT_FILENAME],
                   row_counts={"top_ranked": len(report["anomalies"]["top"])})
    return out_dir


STAGE_RUNNERS = {
    "synth": run_synth,
    "preprocess": run_preprocess,
    "analyze": run_analyze,
    "report": run_report,
}
