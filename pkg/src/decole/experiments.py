"""Seeded end-to-end runs, theorem checks and report emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata, resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .classifier import DiffractedOracle, OracleClassifier, oracle_probas
from .dataset import (
    ClusterSpec,
    Dataset,
    DataError,
    NoiseSpec,
    SpecError,
    generate_synthetic,
    inject_noise,
)
from .detectors import (
    DetectorConfig,
    DETECTOR_NAMES,
    GroupThresholds,
    detect_with_probs,
    run_detector,
)
from .metrics import (
    BIAS_METRICS,
    CISummary,
    MetricCell,
    MetricsReport,
    aggregate_ci,
    evaluate,
    summary_csv,
)
from .seeding import derive_seed

log = logging.getLogger(__name__)

TABLE_PRESETS = (
    "imbalanced-40-10", "imbalanced-30-10", "imbalanced-30-20",
    "balanced-40-20", "balanced-30-10", "balanced-30-20",
    "equal-20", "equal-30", "equal-40",
)
REPORT_FORMATS = ("json", "csv", "plot-data")
PLOT_COLUMNS = ("detector", "group", "panel", "class", "recall", "recall_ci",
                "precision", "precision_ci", "n_runs")


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def preset_names() -> list[str]:
    files = resources.files("decole").joinpath("presets").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".json"))


def load_preset(name: str) -> dict:
    names = preset_names()
    if name not in names:
        raise SpecError("preset", f"unknown preset {name!r}; available: {', '.join(names)}")
    text = resources.files("decole").joinpath("presets", f"{name}.json").read_text("utf-8")
    return json.loads(text)


def _bias_class(raw: dict | None, group_count: int) -> dict[int, int]:
    if raw is None:
        return {g: g for g in range(min(group_count, 2))}
    out = {}
    for g, c in raw.items():
        g, c = int(g), int(c)
        if not 0 <= g < group_count or c not in (0, 1):
            raise SpecError("bias_class", f"bad entry {g}: {c}")
        out[g] = c
    return out


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    cluster: ClusterSpec
    noise: NoiseSpec
    detectors: tuple[DetectorConfig, ...] = tuple(DetectorConfig(n) for n in DETECTOR_NAMES)
    n_iterations: int = 20
    master_seed: int = 0
    bias_class: dict[int, int] = field(default_factory=lambda: {0: 0, 1: 1})
    outputs: tuple[str, ...] = REPORT_FORMATS
    precision_denominator: str = "clean"

    def __post_init__(self) -> None:
        if int(self.n_iterations) != self.n_iterations or self.n_iterations < 1:
            raise SpecError("n_iterations", "must be a positive integer")
        if not self.detectors:
            raise SpecError("detectors", "list must not be empty")
        keys = [d.key for d in self.detectors]
        if len(set(keys)) != len(keys):
            raise SpecError("detectors", "duplicate detector names; set distinct labels")
        if self.noise.group_count != self.cluster.group_count:
            raise SpecError("noise", f"{self.noise.group_count} groups in noise, "
                            f"{self.cluster.group_count} in cluster")
        bad = [f for f in self.outputs if f not in REPORT_FORMATS]
        if bad:
            raise SpecError("outputs", f"unknown formats {bad}")
        if self.precision_denominator not in ("clean", "correct"):
            raise SpecError("precision_denominator", "must be 'clean' or 'correct'")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Build from JSON data; a ``preset`` key supplies any missing sections."""
        d = dict(d)
        known = {"preset", "cluster", "noise", "detectors", "n_iterations", "master_seed",
                 "bias_class", "outputs", "precision_denominator", "name", "description"}
        unknown = set(d) - known
        if unknown:
            raise SpecError("config", f"unknown keys {sorted(unknown)}")
        if "preset" in d:
            base = load_preset(d.pop("preset"))
            for key in ("cluster", "noise", "bias_class"):
                d.setdefault(key, base[key])
        for key in ("cluster", "noise"):
            if key not in d:
                raise SpecError(key, "missing (give it or a preset)")
        cluster = ClusterSpec.from_dict(d["cluster"])
        kwargs = {}
        if "detectors" in d:
            kwargs["detectors"] = tuple(DetectorConfig.from_dict(x) for x in d["detectors"])
        if "outputs" in d:
            kwargs["outputs"] = tuple(d["outputs"])
        for key in ("n_iterations", "master_seed", "precision_denominator"):
            if key in d:
                kwargs[key] = d[key]
        return cls(cluster, NoiseSpec.from_dict(d["noise"]),
                   bias_class=_bias_class(d.get("bias_class"), cluster.group_count), **kwargs)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError("config", f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise SpecError("config", "top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "cluster": self.cluster.to_dict(),
            "noise": self.noise.to_dict(),
            "detectors": [d.to_dict() for d in self.detectors],
            "n_iterations": self.n_iterations,
            "master_seed": self.master_seed,
            "bias_class": {str(g): c for g, c in sorted(self.bias_class.items())},
            "outputs": list(self.outputs),
            "precision_denominator": self.precision_denominator,
        }


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


def iteration_seeds(master_seed: int, index: int, detectors: Sequence[DetectorConfig]) -> dict:
    root = derive_seed(master_seed, "iteration", index)
    seeds = {"generate": derive_seed(root, "generate"), "noise": derive_seed(root, "noise")}
    for d in detectors:
        seeds[f"detector:{d.key}"] = derive_seed(root, "detector", d.key)
    return seeds


def build_dataset(cluster: ClusterSpec, noise: NoiseSpec, seeds: dict) -> Dataset:
    return inject_noise(generate_synthetic(cluster, seeds["generate"]), noise, seeds["noise"])


@dataclass(frozen=True)
class IterationRecord:
    index: int
    seeds: dict
    cells: tuple[MetricCell, ...]
    error: str | None = None
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"index": self.index, "seeds": self.seeds, "error": self.error,
                "warnings": list(self.warnings), "cells": [c.to_dict() for c in self.cells]}

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        return cls(d["index"], d["seeds"], tuple(MetricCell.from_dict(c) for c in d["cells"]),
                   d.get("error"), tuple(d.get("warnings", [])))


def run_iteration(config: ExperimentConfig, index: int) -> IterationRecord:
    """One seeded pass: generate, inject, detect with every detector, evaluate.

    A detector that raises aborts the iteration; the record keeps the error
    and no cells.
    """
    seeds = iteration_seeds(config.master_seed, index, config.detectors)
    cells: list[MetricCell] = []
    messages: list[str] = []
    try:
        data = build_dataset(config.cluster, config.noise, seeds)
        blind = data.without_gold()
        for det in config.detectors:
            result = run_detector(det, blind, seeds[f"detector:{det.key}"])
            messages.extend(f"{det.key}: {m}" for m in result.warnings)
            report = evaluate(result, data, config.bias_class, config.precision_denominator)
            cells.extend(MetricCell(det.key, c.group, c.metric, c.cls, c.numerator, c.denominator)
                         for c in report.cells)
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        log.warning("iteration %d failed: %s", index, exc)
        return IterationRecord(index, seeds, (), f"{type(exc).__name__}: {exc}", tuple(messages))
    return IterationRecord(index, seeds, tuple(cells), None, tuple(messages))


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    iterations: tuple[IterationRecord, ...]
    provenance: dict = field(default_factory=dict)

    def cell_keys(self) -> list[tuple]:
        """Every (detector, group, metric, class) key in first-seen order."""
        seen: dict[tuple, None] = {}
        for it in self.iterations:
            for c in it.cells:
                seen.setdefault(c.key, None)
        return list(seen)

    def values(self, key: tuple) -> list[float | None]:
        out = []
        for it in self.iterations:
            for c in it.cells:
                if c.key == key:
                    out.append(c.value)
        return out

    def summary(self) -> dict[tuple, CISummary]:
        return {key: aggregate_ci(self.values(key)) for key in self.cell_keys()}

    def mean(self, detector: str, group: int | None, metric: str) -> float | None:
        for key, s in self.summary().items():
            if key[:3] == (detector, group, metric):
                return s.mean
        return None

    @property
    def failed_iterations(self) -> list[int]:
        return [it.index for it in self.iterations if it.error is not None]

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "provenance": self.provenance,
            "summary": [{"detector": k[0], "group": k[1], "metric": k[2], "class": k[3],
                         **s.to_dict()} for k, s in self.summary().items()],
            "iterations": [it.to_dict() for it in self.iterations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(ExperimentConfig.from_dict(d["config"]),
                   tuple(IterationRecord.from_dict(it) for it in d["iterations"]),
                   d.get("provenance", {}))

    def to_csv(self) -> str:
        return summary_csv((*k, s) for k, s in self.summary().items())


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def run_experiment(config: ExperimentConfig,
                   progress: Callable[[IterationRecord], None] | None = None) -> ExperimentReport:
    """Run ``config.n_iterations`` independent seeded iterations in order."""
    started = _now()
    records = []
    for i in range(config.n_iterations):
        rec = run_iteration(config, i)
        records.append(rec)
        if progress is not None:
            progress(rec)
    provenance = {
        "started": started,
        "finished": _now(),
        "software_version": _version(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed_schedule": "derive_seed(master, 'iteration', i) then "
                         "'generate' / 'noise' / ('detector', name)",
    }
    return ExperimentReport(config, tuple(records), provenance)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def plot_rows(report: ExperimentReport) -> list[list]:
    """(recall, precision) points per detector, group and panel.

    The ``overall`` panel pairs recall of mislabeled instances with precision
    of the estimated-clean set; the ``bias`` panel pairs recall of the
    group's bias-inducing error with precision of its class.
    """
    summary = report.summary()
    cfg = report.config

    def lookup(det, g, metric):
        for key, s in summary.items():
            if key[:3] == (det, g, metric):
                return key[3], s
        return None, CISummary(None, None, 0)

    rows = []
    for det in cfg.detectors:
        for g in range(cfg.cluster.group_count):
            for panel, (rm, pm) in (("overall", ("recall_mislabeled", "precision_clean")),
                                    ("bias", BIAS_METRICS)):
                cls, r = lookup(det.key, g, rm)
                pcls, p = lookup(det.key, g, pm)
                if panel == "bias" and cls is None:
                    cls = pcls if pcls is not None else cfg.bias_class.get(g)
                rows.append([det.key, g, panel, cls, r.mean, r.half_width,
                             p.mean, p.half_width, min(r.n_runs, p.n_runs)])
    return rows


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def plot_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PLOT_COLUMNS)
    for row in plot_rows(report):
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def emit_report(report: ExperimentReport, out_dir: str | Path,
                formats: Sequence[str] = REPORT_FORMATS) -> list[Path]:
    """Write ``report.json``, ``metrics.csv`` and ``plot_data.csv`` as requested."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    written = []
    for fmt in formats:
        if fmt == "json":
            path, text = out / "report.json", json.dumps(report.to_dict(), indent=2) + "\n"
        elif fmt == "csv":
            path, text = out / "metrics.csv", report.to_csv()
        elif fmt == "plot-data":
            path, text = out / "plot_data.csv", plot_csv(report)
        else:
            raise SpecError("format", f"unknown report format {fmt!r}")
        path.write_text(text, encoding="utf-8")
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# Theorem checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TheoremReport:
    theorem: str
    status: str  # "pass", "fail" or "rejected"
    reason: str = ""
    n: int = 0
    true_mislabeled: int = 0
    flagged: int = 0
    symmetric_difference: tuple[int, ...] = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_dict(self) -> dict:
        return {"theorem": self.theorem, "status": self.status, "reason": self.reason,
                "n": self.n, "true_mislabeled": self.true_mislabeled, "flagged": self.flagged,
                "symmetric_difference": list(self.symmetric_difference),
                "diagnostics": self.diagnostics}


def noise_precondition(noise: NoiseSpec) -> str | None:
    """Reason the noise rates fall outside the theorems' scope, or ``None``."""
    bad = [f"pi[{c}][{g}]={noise.rate(c, g)}" for c in (0, 1)
           for g in range(noise.group_count) if not noise.rate(c, g) < 0.5]
    return f"noise rates must be below 0.5: {', '.join(bad)}" if bad else None


def data_precondition(data: Dataset) -> str | None:
    """Each group needs correctly labeled instances of both classes."""
    correct = data.observed == data.gold
    for g in range(data.group_count):
        for c in (0, 1):
            if not np.any(correct & (data.group == g) & (data.gold == c)):
                return f"group {g} has no correctly labeled instance of class {c}"
    return None


def _theorem_data(cluster: ClusterSpec, noise: NoiseSpec, seed: int) -> Dataset:
    seeds = {"generate": derive_seed(seed, "theorem", "generate"),
             "noise": derive_seed(seed, "theorem", "noise")}
    return build_dataset(cluster, noise, seeds)


def _compare(name: str, data: Dataset, flagged: np.ndarray, truth: np.ndarray,
             diagnostics: dict) -> TheoremReport:
    diff = tuple(int(i) for i in data.ids[flagged != truth])
    return TheoremReport(name, "fail" if diff else "pass",
                         "" if not diff else f"{len(diff)} ids differ",
                         len(data), int(truth.sum()), int(flagged.sum()), diff, diagnostics)


def _oracle_run(cluster: ClusterSpec, noise: NoiseSpec, seed: int, name: str):
    if noise.group_count != cluster.group_count:
        raise SpecError("noise", "group count differs from the cluster spec")
    reason = noise_precondition(noise)
    if reason:
        return None, TheoremReport(name, "rejected", reason)
    data = _theorem_data(cluster, noise, seed)
    reason = data_precondition(data)
    if reason:
        return None, TheoremReport(name, "rejected", reason, len(data))
    result = detect_with_probs(data, oracle_probas(data, noise), name="oracle")
    return (data, result), None


def verify_theorem1(cluster: ClusterSpec, noise: NoiseSpec, seed: int) -> TheoremReport:
    """Oracle scoring plus per-group thresholding recovers the mislabeled set exactly."""
    run, rejected = _oracle_run(cluster, noise, seed, "theorem1")
    if rejected:
        return rejected
    data, result = run
    flagged = result.flagged_mask(data)
    return _compare("theorem1", data, flagged, data.mislabeled_mask(),
                    {"thresholds": [t.to_dict() for t in result.thresholds]})


def verify_theorem2(cluster: ClusterSpec, noise: NoiseSpec, eps_k: float | Sequence[float],
                    seed: int) -> TheoremReport:
    """Diffracted oracle scoring leaves the flagged set unchanged.

    Instances are scored by a :class:`DiffractedOracle` per group, built on
    the ideal thresholds ``lb*``/``ub*`` of the oracle run, and thresholded at
    ``lb* + eps_k`` / ``ub* + eps_k``.  The flagged set must equal the oracle
    run's.  As a diagnostic the report also counts how many flags change when
    the thresholds are instead recomputed from the diffracted scores.
    """
    run, rejected = _oracle_run(cluster, noise, seed, "theorem2")
    if rejected:
        return rejected
    data, ideal = run
    k = data.group_count
    eps = [float(eps_k)] * k if np.isscalar(eps_k) else [float(e) for e in eps_k]
    if len(eps) != k:
        raise SpecError("eps_k", f"expected {k} values")
    probs = np.empty(len(data))
    shifted: dict[int, GroupThresholds] = {}
    for g, th in enumerate(ideal.thresholds):
        rows = np.flatnonzero(data.group == g)
        try:
            oracle = DiffractedOracle(OracleClassifier(noise, g), eps[g], th.lb, th.ub,
                                      derive_seed(seed, "theorem", "diffract", g))
        except ValueError as exc:
            return TheoremReport("theorem2", "rejected", f"group {g}: {exc}", len(data))
        probs[rows] = oracle.probas(data.take(rows))
        shifted[g] = GroupThresholds(g, th.lb + eps[g], th.ub + eps[g])
    result = detect_with_probs(data, probs, shifted, name="diffracted")
    flagged = result.flagged_mask(data)
    recomputed = detect_with_probs(data, probs, name="diffracted-recomputed").flagged_mask(data)
    reference = ideal.flagged_mask(data)
    return _compare("theorem2", data, flagged, reference, {
        "eps_k": eps,
        "recomputed_threshold_mismatches": int(np.count_nonzero(recomputed != reference)),
    })
