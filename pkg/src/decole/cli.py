"""Command-line front end.

Exit codes: 0 success, 1 theorem verification failure, 2 configuration
error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Sequence

from .dataset import (
    ClusterSpec,
    CsvSchema,
    DataError,
    NoiseSpec,
    SpecError,
    load_csv,
    load_spec_json,
    save_csv,
)
from .detectors import DETECTOR_NAMES, DetectionResult, DetectorConfig, run_detector
from .experiments import (
    ExperimentConfig,
    build_dataset,
    emit_report,
    load_preset,
    preset_names,
    run_experiment,
    verify_theorem1,
    verify_theorem2,
)
from .metrics import evaluate, parse_bias_class, write_report
from .seeding import derive_seed

EXIT_OK, EXIT_THEOREM, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3

log = logging.getLogger("decole")


class ConfigError(Exception):
    """Bad flags or configuration contents."""


def _spec_from_args(args) -> dict:
    """Cluster/noise sections from ``--preset`` or a ``--spec`` JSON file."""
    try:
        if args.preset:
            return load_preset(args.preset)
        return load_spec_json(args.spec)
    except OSError as exc:
        raise ConfigError(f"cannot read spec: {exc}") from exc


def _specs(d: dict) -> tuple[ClusterSpec, NoiseSpec]:
    if "cluster" not in d or "noise" not in d:
        raise SpecError("spec", "needs 'cluster' and 'noise' sections")
    return ClusterSpec.from_dict(d["cluster"]), NoiseSpec.from_dict(d["noise"])


def _dataset_seeds(seed: int) -> dict:
    return {"generate": derive_seed(seed, "generate"), "noise": derive_seed(seed, "noise")}


def cmd_generate(args) -> int:
    cluster, noise = _specs(_spec_from_args(args))
    data = build_dataset(cluster, noise, _dataset_seeds(args.seed))
    save_csv(data, args.out)
    log.info("wrote %d rows to %s", len(data), args.out)
    return EXIT_OK


def _detector_config(args) -> DetectorConfig:
    classifier = {}
    if args.epochs is not None:
        classifier["epochs"] = args.epochs
    if args.learning_rate is not None:
        classifier["learning_rate"] = args.learning_rate
    return DetectorConfig(args.detector, n_folds=args.folds, classifier=classifier,
                          forget_rate=args.forget_rate, rounds=args.rounds, budget=args.budget)


def cmd_detect(args) -> int:
    config = _detector_config(args)
    schema = CsvSchema(group=args.group_column, observed=args.label_column)
    data = load_csv(args.data, schema).without_gold()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = run_detector(config, data, args.seed)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    for message in result.warnings:
        print(f"warning: {message}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_json(out / "result.json")
    result.write_manifest(out / "flagged.csv")
    log.info("%s flagged %d of %d instances", config.name, len(result.flagged), len(data))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    schema = CsvSchema(group=args.group_column, observed=args.label_column,
                       gold=args.gold_column)
    data = load_csv(args.data, schema)
    if data.gold is None:
        raise DataError(f"dataset has no {args.gold_column!r} column")
    try:
        raw = json.loads(Path(args.result).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read result {args.result}: {exc}") from exc
    result = DetectionResult.from_dict(raw, data.ids)
    try:
        bias_class = parse_bias_class(args.bias_class, data.group_count)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = evaluate(result, data, bias_class, args.precision_denominator)
    write_report(report, args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    try:
        config = ExperimentConfig.from_json(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    d = config.to_dict()
    d["master_seed"] = args.seed
    if args.iterations is not None:
        d["n_iterations"] = args.iterations
    if args.format:
        d["outputs"] = args.format
    config = ExperimentConfig.from_dict(d)

    def progress(rec):
        status = "ok" if rec.error is None else f"error: {rec.error}"
        log.info("iteration %d/%d %s", rec.index + 1, config.n_iterations, status)

    report = run_experiment(config, progress)
    for path in emit_report(report, args.out, config.outputs):
        log.info("wrote %s", path)
    if report.failed_iterations:
        print(f"warning: iterations {report.failed_iterations} failed", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.spec:
        targets = [(args.spec, _specs(_spec_from_args(args)))]
    else:
        names = [args.preset] if args.preset else preset_names()
        targets = [(n, _specs(load_preset(n))) for n in names]
    reports = []
    for name, (cluster, noise) in targets:
        for r in range(args.replicates):
            seed = derive_seed(args.seed, "replicate", r) if args.replicates > 1 else args.seed
            for rep in (verify_theorem1(cluster, noise, seed),
                        verify_theorem2(cluster, noise, args.eps, seed)):
                line = f"{name} seed={seed} {rep.theorem}: {rep.status}"
                if rep.reason:
                    line += f" ({rep.reason})"
                print(line)
                reports.append({"target": name, "seed": seed, **rep.to_dict()})
    if args.out:
        Path(args.out).write_text(json.dumps(reports, indent=2) + "\n", encoding="utf-8")
    if any(r["status"] == "fail" for r in reports):
        return EXIT_THEOREM
    if any(r["status"] == "rejected" for r in reports):
        return EXIT_CONFIG
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decole", description="Group-aware mislabel detection on tabular data.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def source(p, required=True):
        g = p.add_mutually_exclusive_group(required=required)
        g.add_argument("--spec", help="JSON file with 'cluster' and 'noise' sections")
        g.add_argument("--preset", help=f"shipped preset ({', '.join(preset_names())})")

    def columns(p, gold=False):
        p.add_argument("--group-column", default="group")
        p.add_argument("--label-column", default="observed")
        if gold:
            p.add_argument("--gold-column", default="gold")

    p = sub.add_parser("generate", help="write a synthetic noisy dataset as CSV")
    source(p)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", help="flag likely mislabeled instances")
    p.add_argument("--data", required=True)
    p.add_argument("--detector", choices=DETECTOR_NAMES, default="decole")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--budget", type=float, default=0.1, help="random detector sample share")
    p.add_argument("--forget-rate", type=float, default=0.2)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    columns(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="score a detection result against gold labels")
    p.add_argument("--data", required=True)
    p.add_argument("--result", required=True, help="result.json written by detect")
    p.add_argument("--bias-class", help="group:class pairs, e.g. 0:0,1:1")
    p.add_argument("--precision-denominator", choices=("clean", "correct"), default="clean")
    columns(p, gold=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a seeded multi-iteration experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True, help="master seed")
    p.add_argument("--iterations", type=int)
    p.add_argument("--format", action="append", choices=("json", "csv", "plot-data"))
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("verify-theory", help="check exact recovery under oracle scoring")
    source(p, required=False)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--eps", type=float, default=0.0, help="diffraction offset eps_k")
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--out", help="optional JSON report path")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (SpecError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
