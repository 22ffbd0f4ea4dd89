"""Approximate solutions of (weighted) fold moment equations.

The target is any theta in the box with
``||g(theta)|| <= inf_box ||g|| + epsilon_n`` where
``g(theta) = (1/m) sum_{i in fold} w_i psi(X_i; theta, eta)``. Scores flagged
affine are solved exactly by one linear solve; everything else goes through
projected, damped Gauss-Newton on ``0.5 ||g||^2`` with a Nelder-Mead fallback
when the Jacobian is ill-conditioned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import optimize

from .core import Dataset, ScoreFunction, SolverConfig
from .errors import DegenerateFold, DimensionMismatch, NonConvergence

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

STATIONARITY_TOL = 1e-10
COND_LIMIT = 1e12
SINGULAR_TOL = 1e-10


@dataclass(frozen=True)
class SolveResult:
    theta: NDArray[np.float64]
    achieved_norm: float
    iterations: int
    method_used: str
    converged: bool


class _FoldMoment:
    """g(theta) and its Jacobian on one fold, for fixed weights and nuisance."""

    def __init__(self, score: ScoreFunction, data: Dataset, fold: ArrayLike | None,
                 eta: Any, weights: ArrayLike | None, fd_step: float) -> None:
        idx = np.arange(data.n) if fold is None else np.asarray(fold, dtype=np.intp)
        self.score = score
        self.rows = data._rows(idx)
        self.eta = eta
        self.m = idx.size
        if weights is None:
            self.w = np.ones(self.m)
        else:
            w = np.asarray(weights, dtype=float).reshape(-1)
            if w.size != data.n:
                raise DimensionMismatch(f"weights have length {w.size}, expected n={data.n}")
            self.w = w[idx]
        self.fd_step = fd_step
        self.evals = 0

    def __call__(self, theta: NDArray[np.float64]) -> NDArray[np.float64]:
        self.evals += 1
        return self.w @ self.score.values(self.rows, theta, self.eta) / self.m

    def jacobian(self, theta: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.score.analytic_jacobian is not None:
            jac = self.score.jacobians(self.rows, theta, self.eta)
            return np.einsum("i,ijk->jk", self.w, jac) / self.m
        d = self.score.d_theta
        out = np.empty((d, d))
        for j in range(d):
            h = self.fd_step * max(1.0, abs(theta[j]))
            e = np.zeros(d)
            e[j] = h
            out[:, j] = (self(theta + e) - self(theta - e)) / (2.0 * h)
        return out


def _cond(jac: NDArray[np.float64]) -> float:
    s = np.linalg.svd(jac, compute_uv=False)
    return np.inf if s[-1] <= 0 else float(s[0] / s[-1])


def solve_moment(
    score: ScoreFunction,
    data: Dataset,
    fold: ArrayLike | None = None,
    eta: Any = None,
    weights: ArrayLike | None = None,
    theta_init: ArrayLike | None = None,
    config: SolverConfig | None = None,
) -> SolveResult:
    """Return an epsilon_n-approximate minimizer of the fold moment norm.

    Raises
    ------
    DegenerateFold
        Every weight on the fold is zero.
    NonConvergence
        ``max_iters`` reached without meeting the tolerance or stationarity;
        the exception's ``best`` attribute carries the best iterate.
    """
    config = config or SolverConfig()
    eps = config.resolve(data.n)
    g = _FoldMoment(score, data, fold, eta, weights, config.fd_step)
    if not np.any(g.w > 0):
        raise DegenerateFold("all weights on the fold are zero")
    theta0 = score.midpoint if theta_init is None else np.asarray(theta_init, dtype=float).reshape(-1)
    if theta0.size != score.d_theta:
        raise DimensionMismatch(f"theta_init has length {theta0.size}, expected {score.d_theta}")
    theta0 = score.project(theta0)

    if score.affine and config.closed_form:
        res = _closed_form(g, theta0)
        if res is not None:
            return res
    return _gauss_newton(g, theta0, eps, config)


def _closed_form(g: _FoldMoment, theta0: NDArray[np.float64]) -> SolveResult | None:
    jac = g.jacobian(theta0)
    if _cond(jac) > COND_LIMIT:
        return None
    theta = theta0 - np.linalg.solve(jac, g(theta0))
    if not g.score.contains(theta):
        return None
    return SolveResult(theta, float(np.linalg.norm(g(theta))), 1, "closed_form", True)


def _gauss_newton(g: _FoldMoment, theta: NDArray[np.float64], eps: float,
                  config: SolverConfig) -> SolveResult:
    score = g.score
    val = g(theta)
    norm = float(np.linalg.norm(val))
    best = SolveResult(theta, norm, 0, "gauss_newton", False)
    for it in range(1, config.max_iters + 1):
        if norm <= eps:
            return SolveResult(theta, norm, it - 1, "gauss_newton", True)
        jac = g.jacobian(theta)
        # a vanishing gradient through a singular Jacobian is not a minimum
        if _cond(jac) > COND_LIMIT:
            if config.fallback_enabled:
                return _nelder_mead(g, theta, eps, config, best)
            break
        grad = jac.T @ val
        if np.linalg.norm(theta - score.project(theta - grad)) < STATIONARITY_TOL:
            return SolveResult(theta, norm, it - 1, "gauss_newton", True)
        step = np.linalg.lstsq(jac, -val, rcond=None)[0]
        t = 1.0
        for _ in range(40):
            cand = score.project(theta + t * step)
            cand_val = g(cand)
            cand_norm = float(np.linalg.norm(cand_val))
            if cand_norm < norm:
                break
            t *= 0.5
        else:
            if config.fallback_enabled:
                return _nelder_mead(g, theta, eps, config, best)
            break
        theta, val, norm = cand, cand_val, cand_norm
        if norm < best.achieved_norm:
            best = SolveResult(theta, norm, it, "gauss_newton", False)
    if norm <= eps:
        return SolveResult(theta, norm, config.max_iters, "gauss_newton", True)
    raise NonConvergence(f"Gauss-Newton stopped at norm {best.achieved_norm:.3g} > eps={eps:.3g}", best)


def _nelder_mead(g: _FoldMoment, theta: NDArray[np.float64], eps: float,
                 config: SolverConfig, best: SolveResult) -> SolveResult:
    score = g.score

    def objective(t: NDArray[np.float64]) -> float:
        return float(np.linalg.norm(g(score.project(t))))

    opt = optimize.minimize(objective, theta, method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": max(eps, 1e-15) * 1e-3,
                                     "maxiter": 200 * config.max_iters})
    theta_nm = score.project(opt.x)
    norm = objective(theta_nm)
    if norm < best.achieved_norm:
        best = SolveResult(theta_nm, norm, int(opt.nit), "derivative_free", False)
    if best.achieved_norm <= eps or opt.success:
        return SolveResult(best.theta, best.achieved_norm, int(opt.nit), "derivative_free", True)
    raise NonConvergence(f"Nelder-Mead stopped at norm {best.achieved_norm:.3g} > eps={eps:.3g}", best)


def estimate_jacobian(
    score: ScoreFunction,
    data: Dataset,
    fold: ArrayLike | None,
    eta: Any,
    theta: ArrayLike,
    config: SolverConfig | None = None,
    *,
    use_analytic: bool = True,
) -> NDArray[np.float64]:
    """Fold-average of d psi / d theta^T at ``theta``.

    Analytic when the score provides it (and ``use_analytic``), otherwise
    central differences of the fold moment with step ``fd_step``.
    """
    config = config or SolverConfig()
    g = _FoldMoment(score, data, fold, eta, None, config.fd_step)
    t = np.asarray(theta, dtype=float).reshape(score.d_theta)
    if use_analytic or score.analytic_jacobian is None:
        return g.jacobian(t)
    d = score.d_theta
    out = np.empty((d, d))
    for j in range(d):
        h = config.fd_step * max(1.0, abs(t[j]))
        e = np.zeros(d)
        e[j] = h
        out[:, j] = (g(t + e) - g(t - e)) / (2.0 * h)
    return out


def is_singular(jac: NDArray[np.float64]) -> bool:
    return bool(np.linalg.svd(np.atleast_2d(jac), compute_uv=False)[-1] < SINGULAR_TOL)


# ---------------------------------------------------------------------
# Batched exact solves for affine scores
# ---------------------------------------------------------------------


def affine_parts(score: ScoreFunction, data: Dataset, fold: ArrayLike, eta: Any,
                 theta_ref: ArrayLike, config: SolverConfig | None = None,
                 ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Per-observation ``psi_i(theta_ref)`` and ``d psi_i / d theta^T`` on a fold.

    For an affine score ``psi_i(theta) = psi_i(theta_ref) + J_i (theta - theta_ref)``.
    """
    config = config or SolverConfig()
    rows = data._rows(np.asarray(fold, dtype=np.intp))
    t = np.asarray(theta_ref, dtype=float).reshape(score.d_theta)
    psi = score.values(rows, t, eta)
    if score.analytic_jacobian is not None:
        jac = score.jacobians(rows, t, eta)
    else:
        d = score.d_theta
        jac = np.empty((rows.n, d, d))
        for j in range(d):
            h = config.fd_step * max(1.0, abs(t[j]))
            e = np.zeros(d)
            e[j] = h
            jac[:, :, j] = (score.values(rows, t + e, eta) - score.values(rows, t - e, eta)) / (2.0 * h)
    return psi, jac


def solve_affine_batch(
    psi: NDArray[np.float64],
    jac: NDArray[np.float64],
    theta_ref: NDArray[np.float64],
    weights: NDArray[np.float64],
    score: ScoreFunction,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.bool_]]:
    """Exact weighted solves for many weight rows at once.

    Returns ``(thetas, norms, ok)``. Rows with ``ok`` False (all-zero weights,
    near-singular weighted Jacobian, or root outside the box) must be handled
    by the caller.
    """
    m = psi.shape[0]
    gbar = weights @ psi / m
    jbar = np.einsum("bi,ijk->bjk", weights, jac) / m
    thetas = np.tile(theta_ref, (weights.shape[0], 1))
    norms = np.full(weights.shape[0], np.inf)
    ok = np.any(weights > 0, axis=1)
    if ok.any():
        s = np.linalg.svd(jbar[ok], compute_uv=False)
        good = s[:, -1] > 0
        good &= s[:, 0] <= COND_LIMIT * np.where(good, s[:, -1], 1.0)
        ok[np.flatnonzero(ok)[~good]] = False
    if ok.any():
        delta = np.linalg.solve(jbar[ok], -gbar[ok][..., None])[..., 0]
        thetas[ok] = theta_ref + delta
        resid = gbar[ok] + np.einsum("bjk,bk->bj", jbar[ok], delta)
        norms[ok] = np.linalg.norm(resid, axis=1)
        inside = np.all((thetas >= score.lower) & (thetas <= score.upper), axis=1)
        ok &= inside
    return thetas, norms, ok
