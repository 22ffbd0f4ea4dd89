"""Nuisance learners fitted on fold complements and frozen afterwards.

Each fitted model carries one predictor per nuisance role (``outcome`` for
E[Y|X], ``treatment`` for E[D|X]) plus the training index set, so the
cross-fitting discipline can be checked structurally.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy.spatial import cKDTree

from .core import Dataset
from .errors import EmptyTrainSet, InvalidParam, RankDeficiency, UnknownRole

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

LEARNERS = ("ridge", "lasso", "knn", "oracle", "none")
LASSO_TOL = 1e-8
DEFAULT_RIDGE_PENALTY = 1.0
LASSO_MAX_SWEEPS = 100_000


@dataclass(frozen=True)
class LearnerSpec:
    """Which learner to fit. ``lam=None`` picks the learner's default penalty."""

    kind: str
    lam: float | None = None
    k: int = 5
    functions: Mapping[str, Callable[[NDArray[np.float64]], NDArray[np.float64]]] | None = None

    def __post_init__(self) -> None:
        if self.kind not in LEARNERS:
            raise InvalidParam(f"unknown learner {self.kind!r}; expected one of {LEARNERS}")
        if self.lam is not None and self.lam < 0:
            raise InvalidParam("penalty must be nonnegative")
        if self.kind == "knn" and self.k < 1:
            raise InvalidParam("knn needs k >= 1")
        if self.kind == "oracle" and not self.functions:
            raise InvalidParam("oracle learner needs the true functions")

    @classmethod
    def parse(cls, text: str) -> LearnerSpec:
        """``ridge``, ``ridge:0.1``, ``lasso``, ``lasso:0.05``, ``knn:10`` or ``none``."""
        name, _, arg = text.strip().partition(":")
        try:
            if name in ("ridge", "lasso"):
                return cls(name, lam=float(arg) if arg else None)
            if name == "knn":
                return cls("knn", k=int(arg) if arg else 5)
            if name == "none":
                return cls("none")
        except ValueError as exc:
            raise InvalidParam(f"bad learner argument in {text!r}: {exc}") from None
        raise InvalidParam(f"learner {text!r} cannot be built from text")

    @property
    def label(self) -> str:
        if self.kind in ("ridge", "lasso"):
            return self.kind if self.lam is None else f"{self.kind}:{self.lam:g}"
        if self.kind == "knn":
            return f"knn:{self.k}"
        return self.kind


# ---------------------------------------------------------------------
# Predictors
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LinearPredictor:
    """``intercept + ((x - center) / scale) @ coef`` on standardized covariates."""

    intercept: float
    coef: NDArray[np.float64]
    center: NDArray[np.float64]
    scale: NDArray[np.float64]

    @property
    def raw_coef(self) -> NDArray[np.float64]:
        """Coefficients on the original covariate scale."""
        return self.coef / self.scale

    def __call__(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.coef.size == 0:
            return np.full(x.shape[0], self.intercept)
        return self.intercept + ((x - self.center) / self.scale) @ self.coef


@dataclass(frozen=True, eq=False)
class KnnPredictor:
    tree: Any
    targets: NDArray[np.float64]
    k: int

    def __call__(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.k == self.targets.size:
            return np.full(x.shape[0], self.targets.mean())
        _, nbr = self.tree.query(x, k=self.k)
        nbr = np.asarray(nbr).reshape(x.shape[0], self.k)
        return self.targets[nbr].mean(axis=1)


@dataclass(frozen=True, eq=False)
class NuisanceModel:
    learner: LearnerSpec
    predictors: Mapping[str, Callable[[NDArray[np.float64]], NDArray[np.float64]]]
    train_idx: NDArray[np.intp] = field(repr=False)

    @property
    def roles(self) -> tuple[str, ...]:
        return tuple(self.predictors)

    def predict(self, role: str, x: ArrayLike) -> Any:
        """Prediction for one covariate vector (float) or a matrix of rows (array)."""
        try:
            fn = self.predictors[role]
        except KeyError:
            raise UnknownRole(f"model has no role {role!r}; roles are {self.roles}") from None
        xa = np.asarray(x, dtype=float)
        if xa.ndim <= 1:
            return float(fn(xa.reshape(1, -1))[0])
        return np.asarray(fn(xa), dtype=float)


def predict(model: NuisanceModel, role: str, x: ArrayLike) -> Any:
    return model.predict(role, x)


# ---------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------


def _standardize(x: NDArray[np.float64]) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (x - center) / scale, center, scale


def fit_ridge(x: NDArray[np.float64], y: NDArray[np.float64], lam: float) -> LinearPredictor:
    """Solve ``(Xs^T Xs + lam I) beta = Xs^T (y - ybar)`` on standardized covariates."""
    xs, center, scale = _standardize(x)
    ybar = float(y.mean())
    p = xs.shape[1]
    if p == 0:
        return LinearPredictor(ybar, np.zeros(0), center, scale)
    gram = xs.T @ xs + lam * np.eye(p)
    s = np.linalg.svd(gram, compute_uv=False)
    if s[-1] <= 1e-12 * max(s[0], 1.0):
        raise RankDeficiency("singular Gram matrix; use a positive ridge penalty")
    coef = np.linalg.solve(gram, xs.T @ (y - ybar))
    return LinearPredictor(ybar, coef, center, scale)


def fit_lasso(x: NDArray[np.float64], y: NDArray[np.float64], lam: float,
              tol: float = LASSO_TOL) -> LinearPredictor:
    """Cyclic coordinate descent for ``(1/2n)||y - ybar - Xs b||^2 + lam ||b||_1``.

    Stops when the largest coefficient change in a sweep is below ``tol``.
    """
    xs, center, scale = _standardize(x)
    n, p = xs.shape
    ybar = float(y.mean())
    if p == 0:
        return LinearPredictor(ybar, np.zeros(0), center, scale)
    gram = xs.T @ xs / n
    corr = xs.T @ (y - ybar) / n
    diag = np.diag(gram).copy()
    beta = np.zeros(p)
    gb = np.zeros(p)  # gram @ beta, kept in sync
    for _ in range(LASSO_MAX_SWEEPS):
        max_change = 0.0
        for j in range(p):
            if diag[j] == 0.0:
                continue
            old = beta[j]
            rho = corr[j] - gb[j] + diag[j] * old
            new = math.copysign(max(abs(rho) - lam, 0.0), rho) / diag[j]
            if new != old:
                gb += gram[:, j] * (new - old)
                beta[j] = new
                max_change = max(max_change, abs(new - old))
        if max_change < tol:
            break
    return LinearPredictor(ybar, beta, center, scale)


def default_lasso_penalty(n: int, p: int) -> float:
    return math.sqrt(2.0 * math.log(max(p, 2)) / n)


def fit_nuisance(
    learner: LearnerSpec,
    data: Dataset,
    train_idx: ArrayLike,
    roles: Mapping[str, str] | None = None,
) -> NuisanceModel:
    """Fit one predictor per role on rows ``train_idx``.

    ``roles`` maps role name to the response column; by default ``outcome``
    maps to the outcome column and ``treatment`` to the treatment column
    when declared.
    """
    idx = np.asarray(train_idx, dtype=np.intp)
    if idx.size == 0:
        raise EmptyTrainSet("no training rows")
    idx = np.sort(idx)
    idx.setflags(write=False)
    if roles is None:
        roles = {"outcome": data.outcome} if data.outcome is not None else {}
        if data.treatment is not None:
            roles = {**roles, "treatment": data.treatment}
    kind = learner.kind
    if kind == "none":
        return NuisanceModel(learner, {}, idx)
    if kind == "oracle":
        fns = dict(learner.functions or {})
        missing = set(roles) - set(fns)
        if missing:
            raise UnknownRole(f"oracle lacks functions for roles {sorted(missing)}")
        return NuisanceModel(learner, fns, idx)

    x = data.x[idx]
    p = x.shape[1]
    if kind == "ridge" and idx.size < 2 * p:
        raise InvalidParam(f"ridge needs at least {2 * p} training rows, got {idx.size}")
    if kind == "knn" and learner.k > idx.size:
        raise InvalidParam(f"knn k={learner.k} exceeds training size {idx.size}")
    predictors: dict[str, Callable[[NDArray[np.float64]], NDArray[np.float64]]] = {}
    for role, col in roles.items():
        y = data.column(col)[idx]
        if kind == "ridge":
            predictors[role] = fit_ridge(x, y, DEFAULT_RIDGE_PENALTY if learner.lam is None else learner.lam)
        elif kind == "lasso":
            lam = default_lasso_penalty(idx.size, p) if learner.lam is None else learner.lam
            predictors[role] = fit_lasso(x, y, lam)
        else:
            predictors[role] = KnnPredictor(cKDTree(x), y.copy(), learner.k)
    return NuisanceModel(learner, predictors, idx)
