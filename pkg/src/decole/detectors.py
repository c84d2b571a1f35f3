"""Mislabel detectors: DeCoLe and three comparison baselines.

Every detector partitions a dataset into a flagged (estimated mislabeled)
and a clean (estimated correctly labeled) id set.  None of them reads gold
labels.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .classifier import (
    ClassifierFactory,
    DegenerateFoldWarning,
    crossval_predict_proba,
    fit_or_constant,
    logistic_factory,
)
from .dataset import Dataset, DataError, SpecError
from .seeding import derive_seed


@dataclass(frozen=True)
class GroupThresholds:
    """Per-group thresholds.  ``None`` marks a side with no members."""

    group_id: int | None
    lb: float | None
    ub: float | None

    @property
    def lb_defined(self) -> bool:
        return self.lb is not None

    @property
    def ub_defined(self) -> bool:
        return self.ub is not None

    def to_dict(self) -> dict:
        return {"group": self.group_id, "lb": self.lb, "ub": self.ub,
                "lb_defined": self.lb_defined, "ub_defined": self.ub_defined}

    @classmethod
    def from_dict(cls, d: dict) -> "GroupThresholds":
        return cls(d.get("group"), d.get("lb"), d.get("ub"))


@dataclass(frozen=True)
class ConfidentSets:
    group_id: int | None
    cps: frozenset[int]
    cns: frozenset[int]


def _side_mean(values: np.ndarray) -> float | None:
    if values.size == 0:
        return None
    # the exact mean lies in [min, max]; clamp away summation rounding
    return float(min(max(values.mean(), values.min()), values.max()))


def compute_bounds(probs: np.ndarray, observed: np.ndarray,
                   group_id: int | None = None) -> GroupThresholds:
    """Mean predicted probability over observed positives (lb) and negatives (ub)."""
    probs = np.asarray(probs, dtype=np.float64)
    observed = np.asarray(observed)
    return GroupThresholds(group_id, _side_mean(probs[observed == 1]),
                           _side_mean(probs[observed == 0]))


def _membership(probs: np.ndarray, th: GroupThresholds) -> tuple[np.ndarray, np.ndarray]:
    in_cps = probs >= th.lb if th.lb_defined else np.zeros(probs.shape, bool)
    in_cns = probs <= th.ub if th.ub_defined else np.zeros(probs.shape, bool)
    return in_cps, in_cns


def confident_sets(probs: np.ndarray, ids: Sequence[int],
                   thresholds: GroupThresholds) -> ConfidentSets:
    """Members at or above ``lb`` (CPS) and at or below ``ub`` (CNS).

    Both comparisons are inclusive.  When ``lb <= ub`` an instance can sit in
    both sets; both memberships are kept.
    """
    probs = np.asarray(probs, dtype=np.float64)
    ids = np.asarray(ids)
    in_cps, in_cns = _membership(probs, thresholds)
    return ConfidentSets(thresholds.group_id,
                         frozenset(int(i) for i in ids[in_cps]),
                         frozenset(int(i) for i in ids[in_cns]))


def threshold_flags(probs: np.ndarray, observed: np.ndarray,
                    thresholds: GroupThresholds) -> np.ndarray:
    """Observed-0 members of CPS and observed-1 members of CNS."""
    in_cps, in_cns = _membership(np.asarray(probs, dtype=np.float64), thresholds)
    observed = np.asarray(observed)
    return (in_cps & (observed == 0)) | (in_cns & (observed == 1))


@dataclass(frozen=True)
class DetectionResult:
    detector: str
    ids: np.ndarray
    flagged: frozenset[int]
    thresholds: tuple[GroupThresholds, ...] = ()
    probs: np.ndarray | None = None
    warnings: tuple[str, ...] = ()

    @property
    def clean(self) -> frozenset[int]:
        return frozenset(int(i) for i in self.ids) - self.flagged

    @property
    def clean_count(self) -> int:
        return len(self.ids) - len(self.flagged)

    def flagged_mask(self, dataset: Dataset) -> np.ndarray:
        """Boolean flag per row of ``dataset``; ids must match this result."""
        ids = set(int(i) for i in dataset.ids)
        stray = [i for i in self.flagged if i not in ids]
        if stray:
            raise DataError(f"flagged ids not in dataset: {sorted(stray)[:10]}")
        if len(ids) != len(self.ids) or not np.array_equal(np.sort(dataset.ids), np.sort(self.ids)):
            raise DataError("result covers a different id set than the dataset")
        flagged = np.fromiter(self.flagged, dtype=np.int64, count=len(self.flagged))
        return np.isin(dataset.ids, flagged)

    def to_dict(self) -> dict:
        return {
            "detector": self.detector,
            "flagged": sorted(self.flagged),
            "clean_count": self.clean_count,
            "n": int(len(self.ids)),
            "thresholds": [t.to_dict() for t in self.thresholds],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict, ids: np.ndarray) -> "DetectionResult":
        """Rebuild against the dataset ids the result was computed on."""
        for key in ("detector", "flagged", "clean_count"):
            if key not in d:
                raise DataError(f"result JSON lacks {key!r}")
        flagged = frozenset(int(i) for i in d["flagged"])
        if len(flagged) + int(d["clean_count"]) != len(ids):
            raise DataError(
                f"result has {len(flagged)} flagged + {d['clean_count']} clean, "
                f"dataset has {len(ids)} instances")
        return cls(d["detector"], np.asarray(ids), flagged,
                   tuple(GroupThresholds.from_dict(t) for t in d.get("thresholds", [])),
                   None, tuple(d.get("warnings", [])))

    def write_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def write_manifest(self, path: str | Path) -> None:
        """One-column CSV of flagged ids, for relabeling queues."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id"])
            for i in sorted(self.flagged):
                w.writerow([i])


def _result(name: str, dataset: Dataset, mask: np.ndarray, thresholds=(),
            probs=None, messages: Iterable[str] = ()) -> DetectionResult:
    return DetectionResult(name, dataset.ids.copy(),
                           frozenset(int(i) for i in dataset.ids[mask]),
                           tuple(thresholds), probs, tuple(messages))


# ---------------------------------------------------------------------------
# DeCoLe / CL
# ---------------------------------------------------------------------------


def _confident_learning_block(view: Dataset, factory: ClassifierFactory, n_folds: int,
                              seed: int, group_id: int | None,
                              messages: list[str]) -> tuple[np.ndarray, np.ndarray, GroupThresholds]:
    """Out-of-fold scoring + thresholds + flags for one block of instances."""
    label = "all instances" if group_id is None else f"group {group_id}"
    if len(view) < max(n_folds, 1):
        messages.append(f"{label}: {len(view)} instances < {n_folds} folds; no flags")
        return (np.full(len(view), np.nan), np.zeros(len(view), bool),
                GroupThresholds(group_id, None, None))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateFoldWarning)
        probs = crossval_predict_proba(view, factory, n_folds, seed)
    for w in caught:
        if issubclass(w.category, DegenerateFoldWarning):
            messages.append(f"{label}: {w.message}")
        else:
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    th = compute_bounds(probs, view.observed, group_id)
    return probs, threshold_flags(probs, view.observed, th), th


def decole_detect(dataset: Dataset, factory: ClassifierFactory | None = None,
                  n_folds: int = 5, seed: int = 0) -> DetectionResult:
    """Decoupled confident learning: one model and one threshold pair per group.

    Fold membership is keyed on ``(seed, id)``, so the result for a group is
    identical to running :func:`cl_detect` on that group's view with the same
    seed.
    """
    factory = factory or logistic_factory()
    probs = np.full(len(dataset), np.nan)
    flags = np.zeros(len(dataset), bool)
    thresholds, messages = [], []
    for g in range(dataset.group_count):
        rows = np.flatnonzero(dataset.group == g)
        if rows.size == 0:
            messages.append(f"group {g}: no instances")
            thresholds.append(GroupThresholds(g, None, None))
            continue
        p, f, th = _confident_learning_block(dataset.take(rows), factory, n_folds, seed, g,
                                             messages)
        probs[rows], flags[rows] = p, f
        thresholds.append(th)
    return _result("decole", dataset, flags, thresholds, probs, messages)


def cl_detect(dataset: Dataset, factory: ClassifierFactory | None = None,
              n_folds: int = 5, seed: int = 0) -> DetectionResult:
    """Class-conditional confident learning: the same rule with groups pooled."""
    factory = factory or logistic_factory()
    messages: list[str] = []
    probs, flags, th = _confident_learning_block(dataset, factory, n_folds, seed, None, messages)
    return _result("cl", dataset, flags, [th], probs, messages)


def detect_with_probs(dataset: Dataset, probs: np.ndarray,
                      thresholds: dict[int, GroupThresholds] | None = None,
                      name: str = "decole-scored") -> DetectionResult:
    """Per-group thresholding of externally supplied probabilities.

    With ``thresholds`` omitted they are computed from ``probs``; otherwise
    the given per-group thresholds are applied as they are.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (len(dataset),):
        raise DataError("probs must have one entry per instance")
    flags = np.zeros(len(dataset), bool)
    used = []
    for g in range(dataset.group_count):
        rows = np.flatnonzero(dataset.group == g)
        th = (thresholds[g] if thresholds is not None
              else compute_bounds(probs[rows], dataset.observed[rows], g))
        flags[rows] = threshold_flags(probs[rows], dataset.observed[rows], th)
        used.append(th)
    return _result(name, dataset, flags, used, probs)


# ---------------------------------------------------------------------------
# Co-Teaching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoTeachingConfig:
    forget_rate: float = 0.2
    rounds: int = 10

    def __post_init__(self) -> None:
        if not 0.0 <= self.forget_rate < 1.0:
            raise SpecError("forget_rate", f"must lie in [0, 1), got {self.forget_rate}")
        if int(self.rounds) != self.rounds or self.rounds < 1:
            raise SpecError("rounds", f"must be a positive integer, got {self.rounds}")


def _cross_entropy(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return -(y * np.log(p) + (1 - y) * np.log1p(-p))


def _small_loss(loss: np.ndarray, ids: np.ndarray, n_keep: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((ids, loss))
    return np.sort(order[:n_keep]), np.sort(order[n_keep:])


def coteaching_detect(dataset: Dataset, factory_a: ClassifierFactory | None = None,
                      factory_b: ClassifierFactory | None = None,
                      config: CoTeachingConfig | None = None, seed: int = 0) -> DetectionResult:
    """Two peers repeatedly train on each other's small-loss selections.

    Each peer starts from its own random subset of size ``(1 - forget_rate) n``.
    In every round both peers are fitted, score all instances by
    cross-entropy against the observed label and hand their smallest-loss
    ``(1 - forget_rate)`` share to the other peer as its next training set.
    The flagged set is the large-loss remainder discarded by both peers in
    the final round.
    """
    config = config or CoTeachingConfig()
    factory_a = factory_a or logistic_factory()
    factory_b = factory_b or logistic_factory()
    n = len(dataset)
    n_forget = int(np.floor(config.forget_rate * n + 0.5))
    n_keep = n - n_forget
    X, y, ids = dataset.features, dataset.observed, dataset.ids
    if n_forget == 0 or n_keep == 0:
        return _result("coteaching", dataset, np.zeros(n, bool))

    def initial(peer: int) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(seed, "coteaching", "peer", peer))
        return np.sort(rng.choice(n, size=n_keep, replace=False))

    train = [initial(0), initial(1)]
    factories = (factory_a, factory_b)
    messages: list[str] = []
    discard: list[np.ndarray] = [np.empty(0, np.int64)] * 2
    probs = np.zeros(n)
    for r in range(int(config.rounds)):
        keep = []
        probs = np.zeros(n)
        for peer in (0, 1):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", DegenerateFoldWarning)
                model = fit_or_constant(factories[peer], X[train[peer]], y[train[peer]],
                                        context=f" (peer {peer}, round {r})")
            messages.extend(str(w.message) for w in caught
                            if issubclass(w.category, DegenerateFoldWarning))
            p = model.predict_proba(X)
            probs += 0.5 * p
            k, d = _small_loss(_cross_entropy(p, y), ids, n_keep)
            keep.append(k)
            discard[peer] = d
        train = [keep[1], keep[0]]
    mask = np.zeros(n, bool)
    mask[np.intersect1d(discard[0], discard[1])] = True
    return _result("coteaching", dataset, mask, (), probs, messages)


# ---------------------------------------------------------------------------
# Random
# ---------------------------------------------------------------------------


def random_detect(dataset: Dataset, budget_fraction: float = 0.1, seed: int = 0) -> DetectionResult:
    """Flag ``round(budget_fraction * n)`` instances uniformly without replacement."""
    if not 0.0 <= budget_fraction <= 1.0:
        raise SpecError("budget", f"must lie in [0, 1], got {budget_fraction}")
    n = len(dataset)
    k = int(np.floor(budget_fraction * n + 0.5))
    rows = np.random.default_rng(seed).choice(n, size=k, replace=False)
    mask = np.zeros(n, bool)
    mask[rows] = True
    return _result("random", dataset, mask)


# ---------------------------------------------------------------------------
# Config-driven dispatch
# ---------------------------------------------------------------------------

DETECTOR_NAMES = ("decole", "cl", "coteaching", "random")


@dataclass(frozen=True)
class DetectorConfig:
    name: str
    n_folds: int = 5
    classifier: dict = field(default_factory=dict)
    forget_rate: float = 0.2
    rounds: int = 10
    budget: float = 0.1
    label: str | None = None

    def __post_init__(self) -> None:
        if self.name not in DETECTOR_NAMES:
            raise SpecError("detectors.name", f"unknown detector {self.name!r}; "
                            f"choose from {', '.join(DETECTOR_NAMES)}")
        if int(self.n_folds) != self.n_folds or self.n_folds < 2:
            raise SpecError("detectors.n_folds", "must be an integer >= 2")
        if self.name == "coteaching":
            CoTeachingConfig(self.forget_rate, self.rounds)
        if not 0.0 <= self.budget <= 1.0:
            raise SpecError("detectors.budget", "must lie in [0, 1]")
        try:
            logistic_factory(dict(self.classifier))
        except (TypeError, ValueError) as exc:
            raise SpecError("detectors.classifier", str(exc)) from exc

    @property
    def key(self) -> str:
        """Name used in reports and for seed derivation."""
        return self.label or self.name

    @classmethod
    def from_dict(cls, d: dict | str) -> "DetectorConfig":
        if isinstance(d, str):
            return cls(d)
        known = {"name", "n_folds", "classifier", "forget_rate", "rounds", "budget", "label"}
        unknown = set(d) - known
        if unknown:
            raise SpecError("detectors", f"unknown keys {sorted(unknown)}")
        if "name" not in d:
            raise SpecError("detectors.name", "missing")
        return cls(**d)

    def to_dict(self) -> dict:
        d = {"name": self.name}
        if self.label:
            d["label"] = self.label
        if self.name in ("decole", "cl"):
            d["n_folds"] = self.n_folds
        if self.name in ("decole", "cl", "coteaching"):
            d["classifier"] = dict(self.classifier)
        if self.name == "coteaching":
            d["forget_rate"], d["rounds"] = self.forget_rate, self.rounds
        if self.name == "random":
            d["budget"] = self.budget
        return d


def run_detector(config: DetectorConfig, dataset: Dataset, seed: int) -> DetectionResult:
    factory = logistic_factory(dict(config.classifier))
    if config.name == "decole":
        return decole_detect(dataset, factory, config.n_folds, seed)
    if config.name == "cl":
        return cl_detect(dataset, factory, config.n_folds, seed)
    if config.name == "coteaching":
        return coteaching_detect(dataset, factory, logistic_factory(dict(config.classifier)),
                                 CoTeachingConfig(config.forget_rate, config.rounds), seed)
    return random_detect(dataset, config.budget, seed)
