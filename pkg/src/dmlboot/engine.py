"""Cross-fitted DML estimation and its exchangeably weighted bootstrap.

The bootstrap keeps every fold's nuisance fit from the original estimate and
re-solves only the weighted fold moment
``(1/m) sum_{i in I_k} W_i psi(X_i; theta, eta_k)``. In ``full_sample`` mode
one length-n weight vector is restricted to each fold without
renormalization; in ``within_fold`` mode each fold gets its own independent
length-m vector summing to m.

Draw ``b`` is generated from ``child_rng(seed, b)`` (and ``(seed, b, k)``
per fold in within-fold mode), so the distribution does not depend on how
draws are chunked or how many workers run them.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np

from .core import Dataset, DmlFit, ScoreFunction, SolverConfig, make_folds
from .errors import DegenerateFold, InvalidParam, SingularJacobian
from .inference import fold_psi, sandwich
from .nuisance import LearnerSpec, fit_nuisance
from .solver import affine_parts, estimate_jacobian, is_singular, solve_affine_batch, solve_moment
from .weights import WeightScheme, _draw, child_rng

if TYPE_CHECKING:
    from collections.abc import Mapping

    from numpy.typing import NDArray

log = logging.getLogger(__name__)

MODES = ("full_sample", "within_fold")
CHUNK = 256


def fit_dml(
    data: Dataset,
    score: ScoreFunction,
    learner: LearnerSpec | str = "none",
    K: int = 2,
    config: SolverConfig | None = None,
    *,
    fold_seed: int | None = None,
    roles: Mapping[str, str] | None = None,
) -> DmlFit:
    """Cross-fitted estimate: nuisances on fold complements, fold solves, average.

    ``fold_seed`` switches from contiguous folds to a seeded random partition.
    """
    config = config or SolverConfig()
    if isinstance(learner, str):
        learner = LearnerSpec.parse(learner)
    folds = make_folds(data.n, K, seed=fold_seed)
    eps = config.resolve(data.n)
    nuisances, thetas, norms, jacs = [], [], [], []
    for k, fold in enumerate(folds.folds):
        eta = fit_nuisance(learner, data, folds.complement(k), roles)
        res = solve_moment(score, data, fold, eta, None, None, config)
        nuisances.append(eta)
        thetas.append(res.theta)
        norms.append(res.achieved_norm)
        jacs.append(estimate_jacobian(score, data, fold, eta, res.theta, config))
    fold_thetas = np.array(thetas)
    theta_hat = fold_thetas.mean(axis=0)
    fold_jacs = np.array(jacs)
    jac = fold_jacs.mean(axis=0)
    if is_singular(jac):
        raise SingularJacobian("cross-fit Jacobian estimate is singular")
    est = sandwich(jac, fold_psi(score, data, folds, nuisances, theta_hat))
    return DmlFit(
        theta_hat=theta_hat,
        fold_thetas=fold_thetas,
        nuisances=tuple(nuisances),
        jacobian_hat=jac,
        sigma2_hat=est.sigma2_hat,
        fold_partition=folds,
        achieved_norms=np.array(norms),
        score=score,
        data=data,
        epsilon_n=eps,
        fold_jacobians=fold_jacs,
        learner=learner.label,
    )


def influence_values(fit: DmlFit, data: Dataset | None = None) -> NDArray[np.float64]:
    """Rows ``-J_hat^-1 psi(X_i; theta_hat, eta_k(i))``, shape ``(n, d)``."""
    data = fit.data if data is None else data
    if is_singular(fit.jacobian_hat):
        raise SingularJacobian("cross-fit Jacobian estimate is singular")
    psi = fold_psi(fit.score, data, fit.fold_partition, fit.nuisances, fit.theta_hat)
    return -np.linalg.solve(fit.jacobian_hat, psi.T).T


# ---------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BootstrapDraw:
    theta_star: NDArray[np.float64]
    fold_thetas_star: NDArray[np.float64]
    weight_seed: tuple[int, ...]
    c2_realized: float
    degenerate_folds: tuple[int, ...] = ()


@dataclass(frozen=True, eq=False)
class BootstrapDistribution:
    draws: tuple[BootstrapDraw, ...]
    scheme: WeightScheme
    mode: str
    base_fit: DmlFit
    seed: int = 0

    @property
    def B(self) -> int:
        return len(self.draws)

    @property
    def thetas(self) -> NDArray[np.float64]:
        return np.array([d.theta_star for d in self.draws])

    @property
    def c2_realized(self) -> NDArray[np.float64]:
        return np.array([d.c2_realized for d in self.draws])

    @property
    def degenerate_rate(self) -> float:
        return float(np.mean([bool(d.degenerate_folds) for d in self.draws]))

    def summary(self) -> dict[str, Any]:
        th = self.thetas
        return {
            "scheme": self.scheme.label,
            "mode": self.mode,
            "B": self.B,
            "seed": self.seed,
            "theta_hat": self.base_fit.theta_hat.tolist(),
            "theta_star_mean": th.mean(axis=0).tolist(),
            "theta_star_sd": th.std(axis=0, ddof=1).tolist() if self.B > 1 else [0.0] * th.shape[1],
            "c2_realized_mean": float(self.c2_realized.mean()),
            "degenerate_rate": self.degenerate_rate,
        }


def _weights_for_draw(scheme: WeightScheme, fit: DmlFit, mode: str, seed: int, b: int) -> NDArray[np.float64]:
    n = fit.n
    if mode == "full_sample":
        return _draw(scheme, n, child_rng(seed, b))
    w = np.empty(n)
    m = fit.fold_partition.m
    for k, fold in enumerate(fit.fold_partition.folds):
        w[fold] = _draw(scheme, m, child_rng(seed, b, k))
    return w


class _Runner:
    def __init__(self, fit: DmlFit, scheme: WeightScheme, mode: str, config: SolverConfig, seed: int) -> None:
        self.fit = fit
        self.scheme = scheme
        self.mode = mode
        self.config = config
        self.seed = seed
        self.batch = fit.score.affine and config.closed_form
        self.parts = []
        if self.batch:
            for k, fold in enumerate(fit.fold_partition.folds):
                self.parts.append(affine_parts(fit.score, fit.data, fold, fit.nuisances[k],
                                               fit.fold_thetas[k], config))

    def solve_one(self, k: int, w: NDArray[np.float64]) -> NDArray[np.float64] | None:
        fit = self.fit
        try:
            res = solve_moment(fit.score, fit.data, fit.fold_partition.folds[k], fit.nuisances[k],
                               w, fit.fold_thetas[k], self.config)
        except DegenerateFold:
            return None
        return res.theta

    def run(self, draw_ids: range) -> list[BootstrapDraw]:
        fit = self.fit
        K = fit.K
        W = np.array([_weights_for_draw(self.scheme, fit, self.mode, self.seed, b) for b in draw_ids])
        nb = len(draw_ids)
        fold_thetas = np.empty((nb, K, fit.score.d_theta))
        degenerate = np.zeros((nb, K), dtype=bool)
        for k, fold in enumerate(fit.fold_partition.folds):
            wk = W[:, fold]
            if self.batch:
                psi, jac = self.parts[k]
                th, _, ok = solve_affine_batch(psi, jac, fit.fold_thetas[k], wk, fit.score)
                fold_thetas[:, k] = th
                todo = np.flatnonzero(~ok)
            else:
                todo = range(nb)
            for j in todo:
                res = self.solve_one(k, W[j])
                if res is None:
                    degenerate[j, k] = True
                    fold_thetas[j, k] = fit.fold_thetas[k]
                else:
                    fold_thetas[j, k] = res
        c2 = np.mean((W - 1.0) ** 2, axis=1)
        return [
            BootstrapDraw(
                theta_star=fold_thetas[j].mean(axis=0),
                fold_thetas_star=fold_thetas[j],
                weight_seed=(self.seed, b),
                c2_realized=float(c2[j]),
                degenerate_folds=tuple(int(k) for k in np.flatnonzero(degenerate[j])),
            )
            for j, b in enumerate(draw_ids)
        ]


def bootstrap_dml(
    fit: DmlFit,
    scheme: WeightScheme,
    B: int,
    mode: str = "full_sample",
    config: SolverConfig | None = None,
    seed: int = 0,
    *,
    workers: int = 1,
) -> BootstrapDistribution:
    """``B`` weighted re-solves of the fold moments with frozen nuisances.

    Bootstrap solves warm-start at the original fold estimates. A fold whose
    weights are all zero keeps its original estimate and the draw records the
    fold index in ``degenerate_folds``.
    """
    if B < 1:
        raise InvalidParam("B must be >= 1")
    if mode not in MODES:
        raise InvalidParam(f"unknown bootstrap mode {mode!r}; expected one of {MODES}")
    config = config or SolverConfig(epsilon_n=fit.epsilon_n)
    runner = _Runner(fit, scheme, mode, config, seed)
    chunks = [range(s, min(s + CHUNK, B)) for s in range(0, B, CHUNK)]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(runner.run, chunks))
    else:
        parts = [runner.run(c) for c in chunks]
    draws = tuple(d for part in parts for d in part)
    n_deg = sum(bool(d.degenerate_folds) for d in draws)
    if n_deg:
        log.info("%d of %d draws had a zero-weight fold", n_deg, B)
    return BootstrapDistribution(draws, scheme, mode, fit, seed)
