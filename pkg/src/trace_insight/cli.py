"""Command-line interface.

    trace-insight synth      --config cfg [key=value ...]
    trace-insight preprocess --config cfg [key=value ...]
    trace-insight analyze    --config cfg [key=value ...]
    trace-insight report     --config cfg [key=value ...]

The config file is flat key=value text; every subcommand also accepts
key=value overrides after its flags, and the most common knobs exist as
named flags. Precedence: config file, then named flags, then overrides.
Failures exit nonzero with the offending stage named in the message.
"""

from __future__ import annotations

import argparse
import sys

from .pipeline import STAGE_RUNNERS, StageError, apply_overrides, parse_config_file


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", metavar="FILE",
                     help="flat key=value config file")
    sub.add_argument("overrides", nargs="*", metavar="key=value",
                     help="config overrides, applied last")


def _flag(sub: argparse.ArgumentParser, flag: str, key: str, help_text: str,
          keys: list[str]) -> None:
    sub.add_argument(flag, dest=key, metavar="VALUE", help=help_text)
    keys.append(key)


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, list[str]]]:
    parser = argparse.ArgumentParser(
        prog="trace-insight",
        description="co-located datacenter trace analysis pipeline")
    subparsers = parser.add_subparsers(dest="command", required=True)
    flag_keys: dict[str, list[str]] = {}

    synth = subparsers.add_parser(
        "synth", help="generate a synthetic trace with planted ground truth")
    _add_common(synth)
    keys: list[str] = []
    _flag(synth, "--machines", "synth_machines", "machine count", keys)
    _flag(synth, "--quotas", "synth_quotas",
          "per-type machine counts, 8 comma-separated integers", keys)
    _flag(synth, "--plants", "synth_plants",
          "anomaly plants, e.g. 'Idle:41;HeavyOnline:3:containers=18'", keys)
    _flag(synth, "--gaps", "synth_gaps",
          "sample gaps, e.g. '5:cpu:10-12'", keys)
    _flag(synth, "--noise", "synth_noise", "usage noise sigma", keys)
    _flag(synth, "--seed", "synth_seed", "generator seed (required)", keys)
    _flag(synth, "--out-dir", "output_dir", "where to write the trace", keys)
    flag_keys["synth"] = keys

    preprocess = subparsers.add_parser(
        "preprocess", help="repair gaps and filter duplicate container events")
    _add_common(preprocess)
    keys = []
    _flag(preprocess, "--input-dir", "input_dir", "trace directory", keys)
    _flag(preprocess, "--out-dir", "output_dir", "artifact directory", keys)
    flag_keys["preprocess"] = keys

    analyze = subparsers.add_parser(
        "analyze", help="aggregate, DTW-score, classify, and rank anomalies")
    _add_common(analyze)
    keys = []
    _flag(analyze, "--input-dir", "input_dir", "trace directory", keys)
    _flag(analyze, "--out-dir", "output_dir", "artifact directory", keys)
    _flag(analyze, "--sample-num", "dtw_sample_num",
          "curves sampled for the standard value", keys)
    _flag(analyze, "--standards", "dtw_standards",
          "explicit standard machine ids, comma-separated", keys)
    _flag(analyze, "--threshold", "dtw_threshold", "DTW flagging threshold", keys)
    _flag(analyze, "--k", "classify_k", "cluster count", keys)
    _flag(analyze, "--max-iter", "classify_max_iter", "k-means iteration cap", keys)
    _flag(analyze, "--trees", "anomaly_trees", "isolation forest size", keys)
    _flag(analyze, "--subsample", "anomaly_subsample",
          "isolation tree subsample", keys)
    _flag(analyze, "--mode", "anomaly_mode",
          "per_machine_mean or per_interval", keys)
    _flag(analyze, "--top-n", "anomaly_top_n", "anomalies in the report", keys)
    analyze.add_argument("--normalized", action="store_true",
                         help="report sqrt(cost)/path-length DTW distances")
    analyze.add_argument("--seed", metavar="N",
                         help="sets dtw_seed, classify_seed, and anomaly_seed")
    analyze.add_argument("--label-thresholds", metavar="SPEC",
                         help="e.g. 'always=0.9,none=0.05,gap_fraction=0.25'")
    flag_keys["analyze"] = keys

    report = subparsers.add_parser(
        "report", help="bundle analysis artifacts into one JSON summary")
    _add_common(report)
    keys = []
    _flag(report, "--out-dir", "output_dir", "artifact directory", keys)
    flag_keys["report"] = keys

    return parser, flag_keys


_LABEL_THRESHOLD_KEYS = {
    "always": "classify_always",
    "none": "classify_none",
    "gap_fraction": "classify_gap_fraction",
}


def _collect_config(args: argparse.Namespace, keys: list[str]) -> dict[str, str]:
    config = parse_config_file(args.config) if args.config else {}
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            config[key] = value
    if getattr(args, "normalized", False):
        config["dtw_normalized"] = "true"
    seed = getattr(args, "seed", None)
    if seed is not None:
        config["dtw_seed"] = seed
        config["classify_seed"] = seed
        config["anomaly_seed"] = seed
    spec = getattr(args, "label_thresholds", None)
    if spec:
        for pair in spec.split(","):
            if "=" not in pair:
                raise StageError("config", f"bad label threshold {pair!r}")
            name, value = pair.split("=", 1)
            key = _LABEL_THRESHOLD_KEYS.get(name.strip())
            if key is None:
                raise StageError(
                    "config", f"unknown label threshold {name.strip()!r} "
                              f"(expected {sorted(_LABEL_THRESHOLD_KEYS)})")
            config[key] = value.strip()
    return apply_overrides(config, args.overrides)


def main(argv: list[str] | None = None) -> int:
    parser, flag_keys = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _collect_config(args, flag_keys[args.command])
        out_dir = STAGE_RUNNERS[args.command](config)
    except StageError as e:
        print(f"trace-insight: error {e}", file=sys.stderr)
        return 2
    print(f"{args.command}: ok ({out_dir})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
