import numpy as np
import pytest

from dmlboot.core import Dataset, SolverConfig, mean_score
from dmlboot.dgp import DgpSpec, generate, plr_score
from dmlboot.engine import bootstrap_dml, fit_dml, influence_values
from dmlboot.errors import DivisibilityError, InvalidParam
from dmlboot.weights import WeightScheme, child_rng, draw_weights


def _mean_fit(n=40, K=4, seed=0):
    data = Dataset.from_arrays(np.random.default_rng(seed).normal(1.0, 2.0, n))
    return fit_dml(data, mean_score(), "none", K)


def _oracle_plr_fit(n=400, K=4, seed=0):
    data, eta = generate(DgpSpec("plr_linear", theta0=1.5, dim_x=3), n, seed=seed)
    return fit_dml(data, plr_score(), eta.learner, K)


def test_grand_mean_and_divisibility():
    fit = _mean_fit()
    assert fit.theta_hat[0] == pytest.approx(fit.data.y.mean(), abs=1e-12)
    np.testing.assert_allclose(fit.fold_thetas[:, 0], fit.data.y.reshape(4, 10).mean(1), atol=1e-12)
    with pytest.raises(DivisibilityError):
        fit_dml(Dataset.from_arrays(np.arange(10.0)), mean_score(), "none", 3)


def test_plr_oracle_within_five_se():
    fit = _oracle_plr_fit(n=4000)
    assert abs(fit.theta_hat[0] - 1.5) <= 5 * fit.se[0]
    assert np.all(fit.achieved_norms <= fit.epsilon_n)


def test_unit_weights_reproduce_fit():
    for fit in (_mean_fit(), _oracle_plr_fit()):
        dist = bootstrap_dml(fit, WeightScheme.unit(), 5, seed=1)
        np.testing.assert_allclose(dist.thetas, np.repeat(fit.theta_hat[None], 5, 0), atol=1e-10)


@pytest.mark.parametrize("scheme", [WeightScheme.efron(), WeightScheme.bayesian(), WeightScheme.double()])
def test_weighted_mean_oracle(scheme):
    fit = _mean_fit()
    for mode in ("full_sample", "within_fold"):
        dist = bootstrap_dml(fit, scheme, 30, mode, seed=3)
        for b, draw in enumerate(dist.draws):
            if mode == "full_sample":
                w = draw_weights(scheme, fit.n, child_rng(3, b)).w
            else:
                w = np.concatenate([draw_weights(scheme, 10, child_rng(3, b, k)).w for k in range(4)])
            for k, fold in enumerate(fit.fold_partition.folds):
                if w[fold].sum() > 0:
                    oracle = w[fold] @ fit.data.y[fold] / w[fold].sum()
                    assert draw.fold_thetas_star[k, 0] == pytest.approx(oracle, abs=1e-10)
            assert np.array_equal(draw.theta_star, draw.fold_thetas_star.mean(axis=0))
            assert draw.c2_realized >= 0


def test_iterative_path_matches_batch():
    fit = _oracle_plr_fit()
    fast = bootstrap_dml(fit, WeightScheme.efron(), 20, seed=5)
    slow = bootstrap_dml(fit, WeightScheme.efron(), 20, seed=5,
                         config=SolverConfig(epsilon_n=1e-13, closed_form=False))
    np.testing.assert_allclose(fast.thetas, slow.thetas, atol=1e-8)


def test_delete_all_but_one_degenerate_folds():
    fit = _mean_fit()
    dist = bootstrap_dml(fit, WeightScheme.delete_h(h=fit.n - 1), 20, seed=2)
    for draw in dist.draws:
        assert len(draw.degenerate_folds) == fit.K - 1
        alive = ({0, 1, 2, 3} - set(draw.degenerate_folds)).pop()
        for k in draw.degenerate_folds:
            assert np.array_equal(draw.fold_thetas_star[k], fit.fold_thetas[k])
        # the single survivor carries weight n, so its fold estimate is its own y
        ys = fit.data.y[fit.fold_partition.folds[alive]]
        assert np.min(np.abs(ys - draw.fold_thetas_star[alive, 0])) <= 1e-12
    assert dist.degenerate_rate == 1.0


def test_determinism_across_workers():
    fit = _oracle_plr_fit()
    a = bootstrap_dml(fit, WeightScheme.bayesian(), 600, seed=9, workers=1)
    b = bootstrap_dml(fit, WeightScheme.bayesian(), 600, seed=9, workers=3)
    assert np.array_equal(a.thetas, b.thetas)
    assert np.array_equal(a.c2_realized, b.c2_realized)


def test_nuisances_frozen():
    fit = _oracle_plr_fit()
    ids = [id(m) for m in fit.nuisances]
    dist = bootstrap_dml(fit, WeightScheme.efron(), 10, seed=0)
    assert dist.base_fit is fit
    assert [id(m) for m in dist.base_fit.nuisances] == ids


def test_bootstrap_arguments():
    fit = _mean_fit()
    with pytest.raises(InvalidParam):
        bootstrap_dml(fit, WeightScheme.efron(), 0)
    with pytest.raises(InvalidParam):
        bootstrap_dml(fit, WeightScheme.efron(), 5, mode="pairs")


def test_influence_values():
    fit = _mean_fit()
    np.testing.assert_allclose(influence_values(fit)[:, 0], fit.data.y - fit.theta_hat[0], atol=1e-12)
    plr = _oracle_plr_fit(n=800)
    infl = influence_values(plr)
    for fold in plr.fold_partition.folds:
        # the fold moment at theta_hat differs from the fold solution's by J (theta_hat - theta_k)
        assert abs(infl[fold].mean()) <= plr.epsilon_n + np.ptp(plr.fold_thetas)
    assert np.mean(infl[:, 0] ** 2) == pytest.approx(plr.sigma2_hat[0, 0], abs=1e-12)
