import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decole.classifier import (
    ConstantClassifier,
    DegenerateFoldWarning,
    DiffractedOracle,
    LogisticClassifier,
    LogisticHyper,
    LogisticModel,
    OracleClassifier,
    crossval_predict_proba,
    diffracted_proba,
    fit_logistic,
    logistic_factory,
    logistic_gradient,
    logistic_loss,
    oracle_proba,
    oracle_probas,
    predict_proba,
    stratified_folds,
)
from decole.dataset import (
    Dataset,
    DataError,
    Instance,
    NoiseSpec,
    appendix_cluster,
    bias_noise,
    generate_synthetic,
    inject_noise,
    subset_by_group,
)
from decole.detectors import compute_bounds


def central_difference(w, b, X, y, l2, h=1e-5):
    theta = np.append(w, b)
    grad = np.empty_like(theta)
    for j in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        grad[j] = (logistic_loss(up[:-1], up[-1], X, y, l2)
                   - logistic_loss(down[:-1], down[-1], X, y, l2)) / (2 * h)
    return grad


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        n, d = rng.integers(5, 40), rng.integers(1, 5)
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, n).astype(float)
        w, b = rng.normal(size=d), float(rng.normal())
        gw, gb = logistic_gradient(w, b, X, y, 1e-2)
        analytic = np.append(gw, gb)
        numeric = central_difference(w, b, X, y, 1e-2)
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
        worst = max(worst, rel)
    assert worst < 1e-4


def test_gradient_at_zero():
    X = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]])
    y = np.array([1.0, 0.0, 1.0])
    gw, gb = logistic_gradient(np.zeros(2), 0.0, X, y, 0.3)
    assert np.allclose(gw, np.mean((0.5 - y)[:, None] * X, axis=0))
    assert gb == pytest.approx(np.mean(0.5 - y))


def test_separable_logit():
    model = fit_logistic(np.array([[-10.0], [10.0]]), np.array([0, 1]),
                         LogisticHyper(learning_rate=0.5, epochs=500))
    p = predict_proba(model, np.array([[-10.0], [10.0]]))
    assert p[0] < 0.05 and p[1] > 0.95


def test_single_class_fit_predicts_below_half():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 2))
    model = fit_logistic(X, np.zeros(30))
    assert np.all(predict_proba(model, X) < 0.5)


def test_fit_is_deterministic_and_finite():
    rng = np.random.default_rng(2)
    X, y = rng.normal(size=(50, 3)), rng.integers(0, 2, 50)
    a, b = fit_logistic(X, y), fit_logistic(X, y)
    assert np.array_equal(a.weights, b.weights) and a.bias == b.bias
    assert np.isfinite(a.weights).all()


def test_fit_rejects_non_finite():
    with pytest.raises(DataError):
        fit_logistic(np.array([[1.0], [np.nan]]), np.array([0, 1]))


def test_zero_model_outputs_half_and_is_monotone():
    zero = LogisticModel(np.zeros(2), 0.0, LogisticHyper())
    assert np.all(predict_proba(zero, np.ones((4, 2))) == 0.5)
    model = LogisticModel(np.array([1.0, -2.0]), 0.3, LogisticHyper())
    X = np.random.default_rng(3).normal(size=(100, 2))
    order = np.argsort(X @ model.weights)
    assert np.all(np.diff(predict_proba(model, X)[order]) >= 0)


def test_predict_dimension_mismatch():
    model = LogisticModel(np.zeros(2), 0.0, LogisticHyper())
    with pytest.raises(DataError):
        predict_proba(model, np.ones((3, 3)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
def test_probabilities_in_unit_interval(xs):
    X = np.array(xs).reshape(-1, 1)
    y = (np.arange(len(xs)) % 2).astype(float)
    clf = LogisticClassifier(LogisticHyper(epochs=50)).fit(X, y)
    p = clf.predict_proba(X)
    assert np.all((p >= 0) & (p <= 1))


def test_hyper_validation():
    with pytest.raises(ValueError):
        LogisticHyper(learning_rate=0)
    with pytest.raises(ValueError):
        LogisticHyper.from_dict({"momentum": 0.9})


def _noisy_g1():
    data = inject_noise(generate_synthetic(appendix_cluster(n_total=2000), 4), bias_noise(0.4, 0.2), 5)
    return subset_by_group(data, 1)


def test_oof_covers_every_instance_once():
    view = _noisy_g1()
    folds = stratified_folds(view.ids, view.observed, 5, seed=3)
    assert set(folds.tolist()) == set(range(5))
    sizes = np.bincount(folds)
    assert sizes.max() - sizes.min() <= 1
    for c in (0, 1):
        per = np.bincount(folds[view.observed == c], minlength=5)
        assert per.max() - per.min() <= 1
    probs = crossval_predict_proba(view, logistic_factory(LogisticHyper(epochs=200)), 5, 3)
    assert probs.shape == (len(view),)
    assert np.all((probs >= 0) & (probs <= 1))


def test_folds_depend_only_on_seed_and_id():
    view = _noisy_g1()
    whole = stratified_folds(view.ids, view.observed, 5, 9)
    # same instances, shuffled order, same folds
    perm = np.random.default_rng(0).permutation(len(view))
    shuffled = stratified_folds(view.ids[perm], view.observed[perm], 5, 9)
    assert np.array_equal(whole[perm], shuffled)


def test_lb_recomputed_from_oof_map():
    view = _noisy_g1()
    probs = crossval_predict_proba(view, logistic_factory(LogisticHyper(epochs=300)), 5, 1)
    lb = compute_bounds(probs, view.observed).lb
    pos = [p for p, y in zip(probs.tolist(), view.observed.tolist()) if y == 1]
    assert lb == pytest.approx(sum(pos) / len(pos), abs=1e-12)


class CountingClassifier:
    calls: list = []

    def fit(self, X, y):
        return self

    def predict_proba(self, X):
        CountingClassifier.calls.append(len(X))
        return np.full(len(X), 0.5)


def test_leave_one_out_scores_each_instance_alone():
    CountingClassifier.calls = []
    data = Dataset(np.arange(6.0).reshape(-1, 1), [0] * 6, [0, 1, 0, 1, 0, 1])
    probs = crossval_predict_proba(data, CountingClassifier, n_folds=6, seed=0)
    assert CountingClassifier.calls == [1] * 6
    assert probs.shape == (6,)


def test_degenerate_fold_warns_and_uses_frequency():
    data = Dataset(np.arange(6.0).reshape(-1, 1), [0] * 6, [0, 0, 0, 0, 0, 1])
    with pytest.warns(DegenerateFoldWarning):
        probs = crossval_predict_proba(data, logistic_factory(LogisticHyper(epochs=20)), 6, 0)
    # the positive is scored by a model trained on negatives only
    assert probs[5] == 0.0


def test_crossval_preconditions():
    data = Dataset(np.zeros((3, 1)), [0, 0, 0], [0, 1, 0])
    with pytest.raises(ValueError):
        crossval_predict_proba(data, logistic_factory(), n_folds=1)
    with pytest.raises(DataError):
        crossval_predict_proba(data, logistic_factory(), n_folds=5)


def test_constant_classifier():
    clf = ConstantClassifier().fit(np.zeros((4, 1)), np.array([1, 1, 0, 1]))
    assert np.all(clf.predict_proba(np.zeros((2, 1))) == 0.75)


def test_standardization_uses_training_statistics():
    X = np.array([[0.0], [10.0], [20.0]])
    clf = LogisticClassifier(LogisticHyper(epochs=10)).fit(X, np.array([0, 1, 1]))
    assert clf._mean[0] == pytest.approx(10.0)
    with pytest.raises(RuntimeError):
        LogisticClassifier().predict_proba(X)


def _instance(gold, group, id_=0):
    return Instance(id_, (0.0, 0.0), group, gold, gold)


def test_oracle_values():
    noise = bias_noise(0.4, 0.2)
    assert oracle_proba(_instance(1, 0), noise) == pytest.approx(0.6)
    assert oracle_proba(_instance(0, 1), noise) == pytest.approx(0.2)
    assert oracle_proba(_instance(0, 0), NoiseSpec.zeros(2)) == 0.0
    with pytest.raises(DataError):
        oracle_proba(Instance(0, (0.0,), 0, 1, None), noise)


def test_oracle_takes_two_values_per_group():
    noise = bias_noise(0.3, 0.1)
    data = inject_noise(generate_synthetic(appendix_cluster(n_total=400), 1), noise, 2)
    p = oracle_probas(data, noise)
    for g in (0, 1):
        assert set(np.unique(p[data.group == g])) == {1 - noise.rate(0, g), noise.rate(1, g)}
    assert all(oracle_proba(inst, noise) == p[i] for i, inst in enumerate(data))


def test_diffracted_zero_width_interval_returns_p():
    base = OracleClassifier(bias_noise(0.4, 0.2), 0)
    oracle = DiffractedOracle(base, 0.0, lb_star=0.6, ub_star=0.05, seed=1)
    assert diffracted_proba(_instance(1, 0), oracle) == pytest.approx(0.6)


def test_diffracted_monte_carlo_mean():
    noise = NoiseSpec(((0.3,), (0.1,)))
    base = OracleClassifier(noise, 0)
    oracle = DiffractedOracle(base, 0.02, lb_star=0.55, ub_star=0.15, seed=4)
    n = 100_000
    pos = Dataset(np.zeros((n, 1)), np.zeros(n), np.ones(n), np.ones(n, dtype=int))
    neg = pos.with_observed(np.zeros(n))
    neg = Dataset(neg.features, neg.group, neg.observed, np.zeros(n, dtype=int))
    assert oracle.probas(pos).mean() == pytest.approx(0.02 + 0.7, abs=0.003)
    assert oracle.probas(neg).mean() == pytest.approx(0.02 + 0.1, abs=0.003)
    # an interval reaching below 0 is clipped, never crossing its inner endpoint
    wide = DiffractedOracle(base, 0.0, lb_star=0.55, ub_star=0.3, seed=4).probas(neg)
    assert wide.min() == 0.0 and wide.max() <= 0.3


def test_diffracted_support_with_zero_eps():
    noise = bias_noise(0.4, 0.2)
    base = OracleClassifier(noise, 1)
    oracle = DiffractedOracle(base, 0.0, lb_star=0.8, ub_star=0.21, seed=7)
    data = inject_noise(generate_synthetic(appendix_cluster(n_total=3000), 3), noise, 3)
    view = subset_by_group(data, 1)
    p = oracle.probas(view)
    assert np.all(p[view.gold == 1] >= 0.8)
    assert np.all(p[view.gold == 0] <= 0.21)
    again = [diffracted_proba(inst, oracle) for inst in view.take(np.arange(20))]
    assert np.allclose(again, p[:20])


def test_diffracted_rejects_half():
    base = OracleClassifier(NoiseSpec(((0.5,), (0.1,))), 0)
    oracle = DiffractedOracle(base, 0.0, 0.6, 0.3)
    with pytest.raises(ValueError):
        diffracted_proba(_instance(1, 0), oracle)
