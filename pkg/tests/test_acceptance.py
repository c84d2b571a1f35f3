"""Acceptance criteria, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict that is printed in the
terminal summary, then asserts.
"""

import subprocess
import sys
import time
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings

from decole.classifier import logistic_gradient, logistic_loss
from decole.dataset import ClusterSpec, NoiseSpec, subset_by_group
from decole.detectors import cl_detect, decole_detect
from decole.experiments import (
    TABLE_PRESETS,
    ExperimentConfig,
    load_preset,
    preset_names,
    run_experiment,
    verify_theorem1,
    verify_theorem2,
)

from test_detectors import small_datasets

MASTER_SEED = 0
ITERATIONS = 20


def record(log, number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    log.append(line)
    print(line)
    return ok


@lru_cache(maxsize=None)
def experiment(preset, detectors=("decole", "cl", "coteaching", "random")):
    cfg = ExperimentConfig.from_dict({
        "preset": preset, "n_iterations": ITERATIONS, "master_seed": MASTER_SEED,
        "detectors": list(detectors)})
    start = time.perf_counter()
    report = run_experiment(cfg)
    return report, time.perf_counter() - start


def within(value, target, tol):
    return value is not None and abs(value - target) <= tol


def check_targets(report, targets, tol):
    """(all ok, detail text) for (detector, group, metric) -> target."""
    parts, ok = [], True
    for (det, g, metric), target in targets.items():
        mean = report.mean(det, g, metric)
        good = within(mean, target, tol)
        ok &= good
        shown = "undefined" if mean is None else f"{mean:.3f}"
        parts.append(f"{det} g{g} {metric}={shown} (target {target}±{tol}{'' if good else ' MISS'})")
    return ok, "; ".join(parts)


def theorem_grid():
    for name in preset_names():
        preset = load_preset(name)
        noise = NoiseSpec.from_dict(preset["noise"])
        if noise.max_rate() < 0.5:
            yield name, ClusterSpec.from_dict(preset["cluster"]), noise


def test_criterion_1_oracle_exact_recovery(acceptance_log):
    start = time.perf_counter()
    failures, runs = [], 0
    for name, cluster, noise in theorem_grid():
        for seed in range(20):
            r = verify_theorem1(cluster, noise, seed)
            runs += 1
            if not r.passed:
                failures.append((name, seed, r.status, len(r.symmetric_difference)))
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 10
    record(acceptance_log, 1, ok,
           f"{runs} preset/seed runs, {len(failures)} with non-empty symmetric difference, "
           f"{elapsed:.1f}s (limit 10s)")
    assert not failures, failures[:5]
    assert elapsed < 10


def test_criterion_2_diffracted_stability(acceptance_log):
    start = time.perf_counter()
    failures, runs, recomputed = [], 0, 0
    for name, cluster, noise in theorem_grid():
        for seed in range(20):
            r = verify_theorem2(cluster, noise, 0.0, seed)
            runs += 1
            recomputed += r.diagnostics.get("recomputed_threshold_mismatches", 0)
            if not r.passed:
                failures.append((name, seed, r.status, len(r.symmetric_difference)))
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 10
    record(acceptance_log, 2, ok,
           f"{runs} runs with eps_k=0, {len(failures)} differing flag sets, {elapsed:.1f}s "
           f"(limit 10s); diagnostic: {recomputed} flag changes in total if thresholds were "
           f"re-estimated from the diffracted scores")
    assert not failures, failures[:5]
    assert elapsed < 10


def test_criterion_3_recall_mislabeled(acceptance_log):
    report, elapsed = experiment("imbalanced-40-10", ("decole", "cl"))
    ok, detail = check_targets(report, {
        ("decole", 0, "recall_mislabeled"): 0.817,
        ("decole", 1, "recall_mislabeled"): 0.762,
        ("cl", 0, "recall_mislabeled"): 0.220,
        ("cl", 1, "recall_mislabeled"): 0.719,
    }, 0.05)
    ok &= elapsed < 120
    record(acceptance_log, 3, ok, f"{detail}; {elapsed:.0f}s (limit 120s)")
    assert ok


def test_criterion_4_precision_clean(acceptance_log):
    report, _ = experiment("imbalanced-40-10", ("decole", "cl"))
    ok, detail = check_targets(report, {
        ("decole", 0, "precision_clean"): 0.902,
        ("decole", 1, "precision_clean"): 0.947,
    }, 0.03)
    record(acceptance_log, 4, ok, detail)
    assert ok


def test_criterion_5_bias_metrics(acceptance_log):
    report, _ = experiment("imbalanced-40-10", ("decole", "cl"))
    ok_r, detail_r = check_targets(report, {
        ("decole", 0, "recall_bias_error"): 0.800,
        ("decole", 1, "recall_bias_error"): 0.725,
    }, 0.05)
    ok_p, detail_p = check_targets(report, {
        ("decole", 0, "precision_bias_class"): 0.874,
        ("decole", 1, "precision_bias_class"): 0.921,
    }, 0.03)
    record(acceptance_log, 5, ok_r and ok_p, f"{detail_r}; {detail_p}")
    assert ok_r and ok_p


def fmt(value):
    return "undefined" if value is None else f"{value:.3f}"


def test_criterion_6_ordering(acceptance_log):
    violations, checks = [], 0
    for preset in TABLE_PRESETS:
        report, _ = experiment(preset)
        for g in (0, 1):
            for metric in ("recall_mislabeled", "precision_clean"):
                ours = report.mean("decole", g, metric)
                for rival in ("cl", "coteaching", "random"):
                    checks += 1
                    theirs = report.mean(rival, g, metric)
                    if ours is None or theirs is None or not ours > theirs:
                        violations.append(f"{preset} g{g} {metric}: decole {fmt(ours)} "
                                          f"vs {rival} {fmt(theirs)}")
    ok = not violations
    detail = f"{checks - len(violations)}/{checks} strict orderings hold"
    if violations:
        detail += "; violations: " + "; ".join(violations)
    record(acceptance_log, 6, ok, detail)
    assert ok, violations


def test_criterion_7_random_calibration(acceptance_log):
    report, _ = experiment("imbalanced-40-10", ("random",))
    mean = report.mean("random", None, "recall_mislabeled")
    ok = within(mean, 0.10, 0.03)
    record(acceptance_log, 7, ok, f"random recall_mislabeled mean {mean:.4f} over "
                                  f"{ITERATIONS} seeds (target 0.10±0.03)")
    assert ok


def test_criterion_8_decoupling_equivalence(acceptance_log):
    outcomes = []

    @settings(max_examples=50, deadline=None, derandomize=True, database=None,
              suppress_health_check=list(HealthCheck))
    @given(small_datasets())
    def check(case):
        data, seed = case
        union = set()
        for g in range(data.group_count):
            union |= cl_detect(subset_by_group(data, g), None, 5, seed).flagged
        same = decole_detect(data, None, 5, seed).flagged == union
        outcomes.append(same)
        assert same

    try:
        check()
    finally:
        ok = bool(outcomes) and all(outcomes)
        record(acceptance_log, 8, ok, f"{sum(outcomes)}/{len(outcomes)} random datasets "
                                      f"(n<=200, K<=3) with exact set equality")
    assert len(outcomes) >= 50


def test_criterion_9_gradient_check(acceptance_log):
    rng = np.random.default_rng(2024)
    h, worst = 1e-5, 0.0
    for _ in range(50):
        n, d = int(rng.integers(5, 60)), int(rng.integers(1, 6))
        X = rng.normal(size=(n, d)) * rng.uniform(0.5, 3.0)
        y = rng.integers(0, 2, n).astype(float)
        w, b, l2 = rng.normal(size=d), float(rng.normal()), float(rng.uniform(0, 0.1))
        gw, gb = logistic_gradient(w, b, X, y, l2)
        theta = np.append(w, b)
        numeric = np.empty_like(theta)
        for j in range(theta.size):
            up, down = theta.copy(), theta.copy()
            up[j] += h
            down[j] -= h
            numeric[j] = (logistic_loss(up[:-1], up[-1], X, y, l2)
                          - logistic_loss(down[:-1], down[-1], X, y, l2)) / (2 * h)
        rel = np.linalg.norm(np.append(gw, gb) - numeric) / np.linalg.norm(numeric)
        worst = max(worst, rel)
    ok = worst < 1e-4
    record(acceptance_log, 9, ok, f"worst relative error {worst:.2e} over 50 instances "
                                  f"(limit 1e-4)")
    assert ok


def test_criterion_10_determinism_replay(acceptance_log, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"preset": "main", "n_iterations": 2}')
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        proc = subprocess.run(
            [sys.executable, "-m", "decole", "experiment", "--config", str(cfg),
             "--seed", "17", "--out", str(out)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outputs.append((out / "metrics.csv").read_bytes())
    ok = outputs[0] == outputs[1] and len(outputs[0]) > 0
    record(acceptance_log, 10, ok, f"two separate processes, metrics.csv "
                                   f"{'byte-identical' if ok else 'differs'} "
                                   f"({len(outputs[0])} bytes)")
    assert ok
