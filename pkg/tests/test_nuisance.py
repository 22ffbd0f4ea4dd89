import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from dmlboot.core import Dataset, make_folds, mean_score
from dmlboot.dgp import DgpSpec, generate, plr_score
from dmlboot.engine import fit_dml
from dmlboot.errors import EmptyTrainSet, InvalidParam, RankDeficiency, UnknownRole
from dmlboot.nuisance import LearnerSpec, fit_lasso, fit_nuisance, fit_ridge, predict


def _xy(n=60, p=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    y = x @ np.arange(1.0, p + 1) + rng.normal(size=n)
    return x, y


def test_ridge_exact_slope():
    x = np.array([[1.0], [2.0], [3.0]])
    pred = fit_ridge(x, 2.0 * x[:, 0], 0.0)
    assert pred.raw_coef[0] == pytest.approx(2.0, abs=1e-14)
    assert pred(np.array([[10.0]]))[0] == pytest.approx(20.0, abs=1e-12)


def test_ridge_solves_normal_equations():
    x, y = _xy()
    lam = 3.0
    pred = fit_ridge(x, y, lam)
    xs = (x - x.mean(0)) / x.std(0)
    expect = np.linalg.solve(xs.T @ xs + lam * np.eye(4), xs.T @ (y - y.mean()))
    np.testing.assert_allclose(pred.coef, expect, rtol=1e-12)


def test_ridge_rank_deficiency():
    x = np.column_stack([np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(RankDeficiency):
        fit_ridge(x, np.arange(6.0), 0.0)


def test_lasso_kill_condition():
    x, y = _xy(seed=1)
    xs = (x - x.mean(0)) / x.std(0)
    lam_max = np.max(np.abs(xs.T @ (y - y.mean()))) / len(y)
    assert np.all(fit_lasso(x, y, lam_max).coef == 0.0)
    assert np.any(fit_lasso(x, y, 0.9 * lam_max).coef != 0.0)


@pytest.mark.parametrize("lam", [0.0, 0.05, 0.3, 0.8, 2.0])
def test_lasso_one_dimensional_matches_brute_force(lam):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(40, 1))
    y = 0.7 * x[:, 0] + rng.normal(size=40)
    xs = ((x - x.mean()) / x.std())[:, 0]
    r = y - y.mean()

    def objective(b):
        return np.sum((r - xs * b) ** 2) / (2 * len(y)) + lam * abs(b)

    brute = minimize_scalar(objective, bounds=(-5, 5), method="bounded", options={"xatol": 1e-12}).x
    # subgradient optimality: 0 in grad + lam * sign set
    b = fit_lasso(x, y, lam).coef[0]
    grad = -xs @ (r - xs * b) / len(y)
    if b == 0.0:
        assert abs(grad) <= lam + 1e-12
    else:
        assert grad + lam * np.sign(b) == pytest.approx(0.0, abs=1e-10)
    assert b == pytest.approx(brute, abs=1e-6)


def test_lasso_zero_penalty_matches_ridge_zero():
    x, y = _xy(n=200, p=5, seed=2)
    np.testing.assert_allclose(fit_lasso(x, y, 0.0).coef, fit_ridge(x, y, 0.0).coef, atol=1e-6)


def test_knn():
    rng = np.random.default_rng(3)
    data = Dataset.from_arrays(rng.normal(size=10), None, rng.normal(size=(10, 2)))
    train = np.arange(10)
    full = fit_nuisance(LearnerSpec("knn", k=10), data, train, {"outcome": "y"})
    assert predict(full, "outcome", [100.0, -3.0]) == pytest.approx(data.y.mean(), abs=1e-15)
    one = fit_nuisance(LearnerSpec("knn", k=1), data, train, {"outcome": "y"})
    np.testing.assert_array_equal(one.predict("outcome", data.x), data.y)
    with pytest.raises(InvalidParam):
        fit_nuisance(LearnerSpec("knn", k=11), data, train, {"outcome": "y"})


def test_oracle_and_unknown_role():
    learner = LearnerSpec("oracle", functions={"treatment": lambda x: np.sin(x[:, 0])})
    data = Dataset.from_arrays(np.zeros(4), np.zeros(4), np.zeros((4, 2)))
    model = fit_nuisance(learner, data, [0, 1], {"treatment": "d"})
    assert predict(model, "treatment", [0.0, 0.0]) == 0.0
    with pytest.raises(UnknownRole):
        predict(model, "outcome", [0.0, 0.0])
    with pytest.raises(UnknownRole):
        fit_nuisance(learner, data, [0, 1])


def test_constant_response_ridge():
    rng = np.random.default_rng(5)
    data = Dataset.from_arrays(np.full(20, 3.5), None, rng.normal(size=(20, 3)))
    model = fit_nuisance(LearnerSpec("ridge", lam=0.0), data, np.arange(20), {"outcome": "y"})
    for x in rng.normal(scale=10, size=(5, 3)):
        assert model.predict("outcome", x) == pytest.approx(3.5, abs=1e-12)


def test_preconditions():
    data = Dataset.from_arrays(np.arange(8.0), None, np.random.default_rng(0).normal(size=(8, 3)))
    with pytest.raises(EmptyTrainSet):
        fit_nuisance(LearnerSpec("ridge"), data, [], {"outcome": "y"})
    with pytest.raises(InvalidParam):
        fit_nuisance(LearnerSpec("ridge"), data, np.arange(5), {"outcome": "y"})
    with pytest.raises(InvalidParam):
        LearnerSpec.parse("forest")


def test_predictions_deterministic_and_finite_on_box():
    spec = DgpSpec("plr_linear", dim_x=3)
    data, _ = generate(spec, 200, seed=2)
    for learner in ("ridge", "lasso", "knn:7"):
        model = fit_nuisance(LearnerSpec.parse(learner), data, np.arange(100))
        lo, hi = data.x[:100].min(0), data.x[:100].max(0)
        corners = np.array(np.meshgrid(*zip(lo, hi))).reshape(3, -1).T
        a = model.predict("treatment", corners)
        assert np.all(np.isfinite(a))
        np.testing.assert_array_equal(a, model.predict("treatment", corners))


def test_cross_fit_discipline():
    spec = DgpSpec("plr_linear", dim_x=3)
    data, _ = generate(spec, 120, seed=3)
    fit = fit_dml(data, plr_score(), "ridge", K=3)
    folds = make_folds(120, 3)
    for k, model in enumerate(fit.nuisances):
        np.testing.assert_array_equal(model.train_idx, folds.complement(k))
        assert not set(model.train_idx.tolist()) & set(folds.folds[k].tolist())


def test_none_learner_for_mean_score():
    data = Dataset.from_arrays(np.arange(8.0))
    fit = fit_dml(data, mean_score(), "none", K=2)
    assert fit.nuisances[0].roles == ()
