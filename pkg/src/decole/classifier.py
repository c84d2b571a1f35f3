"""Probabilistic classifiers, out-of-fold scoring and the theory oracles."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .dataset import Dataset, DataError, Instance, NoiseSpec
from .seeding import instance_keys, instance_uniforms


class DegenerateFoldWarning(UserWarning):
    """A training complement held a single observed class."""


class ProbClassifier(Protocol):
    def fit(self, X: np.ndarray, y: np.ndarray) -> "ProbClassifier": ...

    def predict_proba(self, X: np.ndarray) -> np.ndarray: ...


ClassifierFactory = Callable[[], ProbClassifier]


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogisticHyper:
    learning_rate: float = 0.1
    epochs: int = 2000
    l2: float = 1e-4

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ValueError("epochs must be a positive integer")
        if not self.l2 >= 0:
            raise ValueError("l2 must be non-negative")

    @classmethod
    def from_dict(cls, d: dict | None) -> "LogisticHyper":
        d = dict(d or {})
        unknown = set(d) - {"learning_rate", "epochs", "l2", "standardize"}
        if unknown:
            raise ValueError(f"unknown classifier hyperparameters: {sorted(unknown)}")
        d.pop("standardize", None)
        return cls(**d)


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float
    hyper: LogisticHyper

    @property
    def feature_dim(self) -> int:
        return int(self.weights.shape[0])


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean cross-entropy plus ``l2 / 2 * ||w||^2`` (bias not penalised)."""
    z = X @ w + b
    # log(1 + e^z) - y z, written stably
    ce = np.logaddexp(0.0, z) - y * z
    return float(ce.mean() + 0.5 * l2 * (w @ w))


def logistic_gradient(w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray,
                      l2: float) -> tuple[np.ndarray, float]:
    r = sigmoid(X @ w + b) - y
    n = X.shape[0]
    return X.T @ r / n + l2 * w, float(r.sum() / n)


def _check_matrix(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if not np.isfinite(X).all():
        raise DataError("feature matrix contains non-finite values")
    return X


def fit_logistic(X: np.ndarray, y: np.ndarray, hyper: LogisticHyper | None = None) -> LogisticModel:
    """Full-batch gradient descent from zero for exactly ``hyper.epochs`` steps."""
    hyper = hyper or LogisticHyper()
    X = _check_matrix(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] == 0:
        raise DataError("cannot fit on an empty feature matrix")
    if y.shape[0] != X.shape[0]:
        raise DataError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    n = X.shape[0]
    w = np.zeros(X.shape[1])
    b = 0.0
    lr, l2 = hyper.learning_rate, hyper.l2
    XT = X.T / n
    with np.errstate(over="ignore"):
        for _ in range(int(hyper.epochs)):
            r = 1.0 / (1.0 + np.exp(-(X @ w + b))) - y
            w = w - lr * (XT @ r + l2 * w)
            b -= lr * r.mean()
    if not (np.isfinite(w).all() and np.isfinite(b)):
        raise ArithmeticError("logistic regression diverged; lower the learning rate")
    return LogisticModel(w, float(b), hyper)


def predict_proba(model: LogisticModel, X: np.ndarray) -> np.ndarray:
    X = _check_matrix(X)
    if X.shape[1] != model.feature_dim:
        raise DataError(f"expected {model.feature_dim} features, got {X.shape[1]}")
    return sigmoid(X @ model.weights + model.bias)


class LogisticClassifier:
    """Gradient-descent logistic regression with optional z-scoring.

    The scaler is fitted on the training matrix passed to :meth:`fit` and
    reused for every later :meth:`predict_proba` call.
    """

    def __init__(self, hyper: LogisticHyper | None = None, standardize: bool = True):
        self.hyper = hyper or LogisticHyper()
        self.standardize = standardize
        self.model: LogisticModel | None = None
        self._mean: np.ndarray | None = None
        self._scale: np.ndarray | None = None

    def _transform(self, X: np.ndarray) -> np.ndarray:
        if not self.standardize:
            return X
        return (X - self._mean) / self._scale

    def fit(self, X: np.ndarray, y: np.ndarray) -> "LogisticClassifier":
        X = _check_matrix(X)
        if self.standardize:
            self._mean = X.mean(axis=0)
            scale = X.std(axis=0)
            self._scale = np.where(scale > 0, scale, 1.0)
        self.model = fit_logistic(self._transform(X), y, self.hyper)
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        if self.model is None:
            raise RuntimeError("classifier is not fitted")
        return predict_proba(self.model, self._transform(_check_matrix(X)))


def logistic_factory(hyper: LogisticHyper | dict | None = None,
                     standardize: bool = True) -> ClassifierFactory:
    if isinstance(hyper, dict):
        standardize = bool(hyper.get("standardize", standardize))
        hyper = LogisticHyper.from_dict(hyper)
    return lambda: LogisticClassifier(hyper, standardize)


class ConstantClassifier:
    """Predicts the positive-class frequency seen at fit time."""

    def __init__(self, value: float | None = None):
        self.value = value

    def fit(self, X: np.ndarray, y: np.ndarray) -> "ConstantClassifier":
        self.value = float(np.mean(y))
        return self

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], self.value, dtype=np.float64)


def fit_or_constant(factory: ClassifierFactory, X: np.ndarray, y: np.ndarray,
                    context: str = "") -> ProbClassifier:
    """Fit a fresh classifier, or a constant scorer when ``y`` has one class."""
    if np.unique(y).size < 2:
        warnings.warn(
            f"degenerate training set{context}: single observed class {int(y[0])}; "
            f"scoring with constant frequency {float(np.mean(y))}",
            DegenerateFoldWarning, stacklevel=3)
        return ConstantClassifier().fit(X, y)
    return factory().fit(X, y)


# ---------------------------------------------------------------------------
# Cross-validated probabilities
# ---------------------------------------------------------------------------


def stratified_folds(ids: np.ndarray, labels: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Fold index per row, stratified by ``labels``.

    Within each class, rows are ordered by a key that depends only on
    ``(seed, id)`` and dealt round-robin; the dealing position carries over
    from class 0 to class 1 so fold sizes differ by at most one.  The same
    instance therefore lands in the same fold whether it is scored inside a
    group view or inside a dataset containing only that group.
    """
    keys = instance_keys(seed, ids)
    fold = np.empty(len(ids), dtype=np.int64)
    offset = 0
    for c in (0, 1):
        rows = np.flatnonzero(labels == c)
        order = rows[np.lexsort((ids[rows], keys[rows]))]
        fold[order] = (offset + np.arange(order.size)) % n_folds
        offset += order.size
    return fold


def crossval_predict_proba(data: Dataset, factory: ClassifierFactory, n_folds: int = 5,
                           seed: int = 0) -> np.ndarray:
    """Out-of-fold estimates of p(observed = 1 | x), aligned with ``data`` rows.

    Every instance is scored exactly once, by a model fitted on the other
    folds.  A training complement with a single observed class is scored with
    that class's frequency and raises :class:`DegenerateFoldWarning`.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be at least 2")
    if len(data) < n_folds:
        raise DataError(f"{len(data)} instances cannot fill {n_folds} folds")
    fold = stratified_folds(data.ids, data.observed, n_folds, seed)
    X, y = data.features, data.observed
    probs = np.empty(len(data), dtype=np.float64)
    for j in range(n_folds):
        test = fold == j
        if not test.any():
            continue
        train = ~test
        model = fit_or_constant(factory, X[train], y[train], context=f" (fold {j})")
        probs[test] = model.predict_proba(X[test])
    return probs


# ---------------------------------------------------------------------------
# Theory oracles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleClassifier:
    """Scores an instance with p(observed = 1 | gold, group) exactly."""

    noise: NoiseSpec
    group: int

    def proba(self, gold: int) -> float:
        if gold == 1:
            return 1.0 - self.noise.rate(0, self.group)
        return self.noise.rate(1, self.group)


def oracle_proba(instance: Instance, noise: NoiseSpec) -> float:
    if instance.gold_label is None:
        raise DataError(f"instance {instance.id} has no gold label")
    return OracleClassifier(noise, instance.group_id).proba(instance.gold_label)


def oracle_probas(dataset: Dataset, noise: NoiseSpec) -> np.ndarray:
    """Vectorised :func:`oracle_proba` over every row of ``dataset``."""
    if dataset.gold is None:
        raise DataError("oracle scoring requires gold labels")
    pi = np.asarray(noise.pi)
    return np.where(dataset.gold == 1, 1.0 - pi[0, dataset.group], pi[1, dataset.group])


@dataclass(frozen=True)
class DiffractedOracle:
    """Ideal probability plus bounded per-instance noise.

    For ideal probability p above 1/2 the output is uniform on
    ``[eps_k + lb_star, eps_k + 2p - lb_star]``; below 1/2 it is uniform on
    ``[eps_k + 2p - ub_star, eps_k + ub_star]``.  ``lb_star``/``ub_star`` are
    the group's thresholds under ideal scoring.  Outputs are clipped to
    [0, 1]; clipping never moves a draw across its interval's inner endpoint.
    """

    base: OracleClassifier
    eps_k: float
    lb_star: float
    ub_star: float
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.eps_k + self.ub_star <= self.eps_k + self.lb_star <= 1.0:
            raise ValueError("need 0 <= eps_k + ub_star <= eps_k + lb_star <= 1")

    def _draw(self, p: np.ndarray, u: np.ndarray) -> np.ndarray:
        if np.any(p == 0.5):
            raise ValueError("ideal probability exactly 1/2 has no diffraction interval")
        upper = p > 0.5
        if np.any(upper & (p < self.lb_star)) or np.any(~upper & (p > self.ub_star)):
            raise ValueError("diffraction interval is empty (p on the wrong side of its bound)")
        # anchor on the inner endpoint so that rounding cannot cross it
        hi_side = (self.eps_k + self.lb_star) + u * (2.0 * (p - self.lb_star))
        lo_side = (self.eps_k + self.ub_star) - u * (2.0 * (self.ub_star - p))
        return np.clip(np.where(upper, hi_side, lo_side), 0.0, 1.0)

    def proba(self, instance: Instance) -> float:
        if instance.gold_label is None:
            raise DataError(f"instance {instance.id} has no gold label")
        p = np.array([self.base.proba(instance.gold_label)])
        u = instance_uniforms(self.seed, np.array([instance.id]))
        return float(self._draw(p, u)[0])

    def probas(self, data: Dataset) -> np.ndarray:
        if data.gold is None:
            raise DataError("diffracted scoring requires gold labels")
        p = np.where(data.gold == 1, self.base.proba(1), self.base.proba(0))
        return self._draw(p, instance_uniforms(self.seed, data.ids))


def diffracted_proba(instance: Instance, oracle: DiffractedOracle) -> float:
    return oracle.proba(instance)
