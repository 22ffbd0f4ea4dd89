from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dmlboot.core import Dataset, ScoreFunction, mean_score
from dmlboot.dgp import DgpSpec, generate, plr_score
from dmlboot.engine import bootstrap_dml, fit_dml
from dmlboot.errors import InsufficientDraws
from dmlboot.inference import (
    bootstrap_ci,
    bootstrap_interval,
    estimate_sigma2,
    ks_distance,
    normal,
    scaled_deviations,
    wald_ci,
    wald_interval,
)
from dmlboot.weights import WeightScheme


def _mean_fit(y, K=4):
    return fit_dml(Dataset.from_arrays(y), mean_score(), "none", K)


def test_sigma2_mean_score_is_sample_variance():
    y = np.random.default_rng(0).normal(3.0, 2.0, 200)
    est = estimate_sigma2(_mean_fit(y))
    assert est.sigma2_hat[0, 0] == pytest.approx(np.var(y), rel=1e-12)
    assert est.jacobian_hat[0, 0] == -1.0
    assert np.all(est.eigenvalues >= 0)


def test_sigma2_plr_oracle():
    spec = DgpSpec("plr_linear", noise_sd=(1.0, 2.0), dim_x=3)
    data, eta = generate(spec, 10_000, seed=1)
    fit = fit_dml(data, plr_score(), eta.learner, 4)
    assert fit.sigma2_hat[0, 0] == pytest.approx(0.25, rel=0.10)


def test_sigma2_diagonal_toy_score():
    rng = np.random.default_rng(2)
    a = rng.normal(size=400)
    b = rng.normal(size=400)
    ac, bc = a - a.mean(), b - b.mean()
    b = bc - (ac @ bc) / (ac @ ac) * ac + 5.0  # centered columns orthogonal
    score = ScoreFunction(
        2, [-1e6, -1e6], [1e6, 1e6],
        lambda rows, t, eta: np.column_stack([rows.column("a") - t[0], rows.column("b") - t[1]]),
        lambda rows, t, eta: np.broadcast_to(-np.eye(2), (rows.n, 2, 2)).copy(),
        affine=True,
    )
    data = Dataset(np.column_stack([a, b]), ("a", "b"))
    fit = fit_dml(data, score, "none", 4)
    assert abs(fit.sigma2_hat[0, 1]) <= 1e-10
    assert fit.sigma2_hat[0, 0] == pytest.approx(np.var(a), rel=1e-12)


def test_wald_examples():
    ci = wald_interval([0.0], [[1.0]], 100, 0.95)
    assert ci.half_width[0] == pytest.approx(stats.norm.ppf(0.975) * 0.1, rel=1e-12)
    assert ci.half_width[0] == pytest.approx(0.196, abs=5e-5)
    tiny = wald_interval([2.0], [[1.0]], 100, 1e-12)
    assert tiny.half_width[0] <= 1e-12
    fit = _mean_fit(np.full(8, 4.0))
    ci = wald_ci(fit)
    assert ci.lower[0] == ci.upper[0] == 4.0


def test_wald_level_monotone():
    levels = np.linspace(0.05, 0.99, 20)
    widths = [wald_interval([0.0], [[2.0]], 50, lv).half_width[0] for lv in levels]
    assert np.all(np.diff(widths) > 0)


def test_constant_draws_zero_width():
    theta = np.array([1.3])
    draws = np.full((100, 1), 1.3)
    for method in ("percentile", "basic", "studentized"):
        ci = bootstrap_interval(theta, draws, 0.9, method, 1.0, [[1.0]], 100)
        assert ci.lower[0] == ci.upper[0] == 1.3


def test_too_few_draws():
    with pytest.raises(InsufficientDraws):
        bootstrap_interval([0.0], [[0.1]], 0.9, "percentile", 1.0)
    with pytest.warns(RuntimeWarning):
        bootstrap_interval([0.0], [[0.1], [0.2]], 0.9, "percentile", 1.0)


def test_double_bootstrap_halves_width():
    y = np.random.default_rng(3).normal(size=200)
    dist = bootstrap_dml(_mean_fit(y), WeightScheme.efron(), 300, seed=1)
    doubled = replace(dist, scheme=WeightScheme.double())
    a = bootstrap_ci(dist, 0.9, "percentile")
    b = bootstrap_ci(doubled, 0.9, "percentile")
    assert b.c_used == pytest.approx(np.sqrt(2.0))
    # c = sqrt(2) relative to Efron; a c = 2 scheme would halve it
    np.testing.assert_allclose(b.half_width, a.half_width / np.sqrt(2.0), rtol=1e-12)
    c1 = bootstrap_interval([0.0], dist.thetas - dist.base_fit.theta_hat, 0.9, "percentile", 1.0)
    c2 = bootstrap_interval([0.0], dist.thetas - dist.base_fit.theta_hat, 0.9, "percentile", 2.0)
    np.testing.assert_allclose(c2.half_width, c1.half_width / 2, rtol=1e-12)


def test_percentile_close_to_wald():
    y = np.random.default_rng(4).normal(size=400)
    fit = _mean_fit(y)
    dist = bootstrap_dml(fit, WeightScheme.efron(), 2000, seed=2)
    p, w = bootstrap_ci(dist, 0.95, "percentile"), wald_ci(fit)
    hw = w.half_width[0]
    assert abs(p.lower[0] - w.lower[0]) <= 0.05 * hw
    assert abs(p.upper[0] - w.upper[0]) <= 0.05 * hw


def test_realized_c_mode_and_uncorrected():
    y = np.random.default_rng(5).normal(size=200)
    dist = bootstrap_dml(_mean_fit(y), WeightScheme.delete_h(fraction=0.8), 200, seed=3)
    assert bootstrap_ci(dist, 0.9, "basic", "realized").c_used == pytest.approx(2.0)
    raw = scaled_deviations(dist, corrected=False)
    np.testing.assert_allclose(scaled_deviations(dist), raw / 2.0, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_scaling_equivariance(seed, lam):
    dev = np.random.default_rng(seed).standard_t(4, size=(200, 1))
    for method in ("percentile", "basic"):
        a = bootstrap_interval([1.0], 1.0 + dev, 0.9, method, 1.0)
        b = bootstrap_interval([1.0], 1.0 + lam * dev, 0.9, method, 1.0)
        np.testing.assert_allclose(b.half_width, lam * a.half_width, rtol=1e-10)


def test_studentized_matches_percentile_on_symmetric_draws():
    half = np.random.default_rng(6).normal(size=(500, 1))
    dev = np.concatenate([half, -half])
    for n in (1, 100):
        s = bootstrap_interval([0.0], dev / np.sqrt(n), 0.9, "studentized", 1.0, [[1.0]], n)
        p = bootstrap_interval([0.0], dev / np.sqrt(n), 0.9, "percentile", 1.0)
        np.testing.assert_allclose([s.lower, s.upper], [p.lower, p.upper], atol=1e-14)


def test_ks_examples():
    x = np.random.default_rng(7).normal(size=300)
    assert ks_distance(x, x) == 0.0
    assert ks_distance([0.0], normal(0, 1)) == pytest.approx(0.5)
    grid = (np.arange(1000) + 0.25) / 1000
    assert ks_distance(grid, grid + 0.5 / 1000) <= 0.002
    assert ks_distance([0.0, 0.0], normal(0, 0)) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 60), st.integers(1, 60))
def test_ks_against_scipy(seed, n1, n2):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=n1), rng.normal(0.3, 1.2, size=n2)
    b[: n2 // 3] = np.round(b[: n2 // 3], 1)
    assert ks_distance(a, normal(0.2, 2.0)) == pytest.approx(
        stats.kstest(a, "norm", args=(0.2, np.sqrt(2.0))).statistic, abs=1e-12)
    assert ks_distance(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_ks_symmetric_and_triangle(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=30), rng.normal(0.5, size=45), rng.exponential(size=20)
    assert ks_distance(a, b) == ks_distance(b, a)
    assert ks_distance(a, c) <= ks_distance(a, b) + ks_distance(b, c) + 1e-15


def test_interval_serialization():
    d = wald_interval([1.0], [[4.0]], 16, 0.9).to_dict()
    assert set(d) == {"method", "level", "lower", "upper", "c_used"}
    assert d["lower"][0] < 1.0 < d["upper"][0]
