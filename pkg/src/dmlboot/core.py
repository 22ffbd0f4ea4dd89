"""Shared domain types: datasets, fold partitions, scores, solver settings, fits.

Indices are 0-based throughout; fold ``k`` of a contiguous partition holds
``range(k * m, (k + 1) * m)``.
"""

from __future__ import annotations

import csv
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from .errors import DimensionMismatch, DivisibilityError, InvalidDataset, InvalidK, InvalidParam

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray


# ---------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of fixed-width real observations with a role-annotated column schema."""

    values: NDArray[np.float64]
    columns: tuple[str, ...]
    outcome: str | None = None
    treatment: str | None = None
    covariates: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise InvalidDataset("values must be a 2-D array")
        if vals.shape[0] < 2:
            raise InvalidDataset(f"need at least 2 rows, got {vals.shape[0]}")
        if vals.shape[1] != len(self.columns):
            raise InvalidDataset(
                f"{vals.shape[1]} value columns but {len(self.columns)} names",
            )
        if len(set(self.columns)) != len(self.columns):
            raise InvalidDataset("duplicate column names")
        if not np.all(np.isfinite(vals)):
            raise InvalidDataset("non-finite values are not admitted")
        for name in (self.outcome, self.treatment, *self.covariates):
            if name is not None and name not in self.columns:
                raise InvalidDataset(f"role column {name!r} not in schema")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "covariates", tuple(self.covariates))

    @classmethod
    def from_arrays(
        cls,
        y: ArrayLike,
        d: ArrayLike | None = None,
        x: ArrayLike | None = None,
    ) -> Dataset:
        """Build a dataset from outcome, optional treatment and covariate arrays."""
        cols: list[NDArray[np.float64]] = [np.asarray(y, dtype=float).reshape(-1)]
        names = ["y"]
        treatment = None
        if d is not None:
            cols.append(np.asarray(d, dtype=float).reshape(-1))
            names.append("d")
            treatment = "d"
        cov: list[str] = []
        if x is not None:
            xa = np.asarray(x, dtype=float)
            if xa.ndim == 1:
                xa = xa[:, None]
            for j in range(xa.shape[1]):
                cols.append(xa[:, j])
                cov.append(f"x{j + 1}")
            names.extend(cov)
        lengths = {len(c) for c in cols}
        if len(lengths) != 1:
            raise InvalidDataset("all columns must have the same length")
        return cls(np.column_stack(cols), tuple(names), "y", treatment, tuple(cov))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def column(self, name: str) -> NDArray[np.float64]:
        try:
            j = self.columns.index(name)
        except ValueError:
            raise InvalidDataset(f"unknown column {name!r}") from None
        return self.values[:, j]

    @property
    def y(self) -> NDArray[np.float64]:
        if self.outcome is None:
            raise InvalidDataset("no outcome column declared")
        return self.column(self.outcome)

    @property
    def d(self) -> NDArray[np.float64]:
        if self.treatment is None:
            raise InvalidDataset("no treatment column declared")
        return self.column(self.treatment)

    @property
    def x(self) -> NDArray[np.float64]:
        if not self.covariates:
            return np.zeros((self.n, 0))
        idx = [self.columns.index(c) for c in self.covariates]
        return self.values[:, idx]

    def take(self, idx: ArrayLike) -> Dataset:
        """Sub-dataset of the given rows (at least two)."""
        return Dataset(self.values[np.asarray(idx)], self.columns, self.outcome,
                       self.treatment, self.covariates)

    def _rows(self, idx: ArrayLike) -> _Rows:
        return _Rows(self, np.asarray(idx, dtype=np.intp))

    # CSV round trip -----------------------------------------------------

    @classmethod
    def read_csv(
        cls,
        path: str | Path,
        outcome: str,
        treatment: str | None = None,
        covariates: Sequence[str] | None = None,
    ) -> Dataset:
        """Read a CSV with a header row; every column must be numeric.

        ``covariates=None`` takes every column not assigned another role.
        """
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise InvalidDataset(f"{path}: empty file") from None
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise InvalidDataset(f"{path}:{lineno}: expected {len(header)} fields")
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise InvalidDataset(f"{path}:{lineno}: {exc}") from None
        if covariates is None:
            covariates = [h for h in header if h not in (outcome, treatment)]
        return cls(np.asarray(rows, dtype=float).reshape(len(rows), len(header)),
                   tuple(header), outcome, treatment, tuple(covariates))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.values:
                writer.writerow([repr(float(v)) for v in row])


class _Rows:
    """Lazy row subset: role accessors without copying the schema checks."""

    __slots__ = ("_data", "_idx")

    def __init__(self, data: Dataset, idx: NDArray[np.intp]) -> None:
        self._data = data
        self._idx = idx

    @property
    def n(self) -> int:
        return len(self._idx)

    @property
    def y(self) -> NDArray[np.float64]:
        return self._data.y[self._idx]

    @property
    def d(self) -> NDArray[np.float64]:
        return self._data.d[self._idx]

    @property
    def x(self) -> NDArray[np.float64]:
        return self._data.x[self._idx]

    def column(self, name: str) -> NDArray[np.float64]:
        return self._data.column(name)[self._idx]


# ---------------------------------------------------------------------
# Folds
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FoldPartition:
    n: int
    folds: tuple[NDArray[np.intp], ...]

    @property
    def K(self) -> int:
        return len(self.folds)

    @property
    def m(self) -> int:
        sizes = {len(f) for f in self.folds}
        if len(sizes) != 1:
            raise DivisibilityError("folds have unequal sizes")
        return sizes.pop()

    def complement(self, k: int) -> NDArray[np.intp]:
        mask = np.ones(self.n, dtype=bool)
        mask[self.folds[k]] = False
        return np.flatnonzero(mask)

    def fold_of(self) -> NDArray[np.intp]:
        """Array mapping each observation index to its fold number."""
        out = np.empty(self.n, dtype=np.intp)
        for k, f in enumerate(self.folds):
            out[f] = k
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FoldPartition):
            return NotImplemented
        return self.n == other.n and self.K == other.K and all(
            np.array_equal(a, b) for a, b in zip(self.folds, other.folds)
        )

    __hash__ = None  # type: ignore[assignment]


def make_folds(n: int, K: int, *, strict: bool = True, seed: int | None = None) -> FoldPartition:
    """Partition ``range(n)`` into ``K`` folds.

    Contiguous blocks by default. ``seed`` permutes indices before blocking,
    for robustness studies. With ``strict=False`` a non-divisible ``n`` yields
    near-equal folds.
    """
    if K < 2:
        raise InvalidK(f"K must be >= 2, got {K}")
    if n < K:
        raise DivisibilityError(f"n={n} is smaller than K={K}")
    if strict and n % K:
        raise DivisibilityError(f"n={n} is not divisible by K={K}")
    order = np.arange(n, dtype=np.intp)
    if seed is not None:
        order = np.random.default_rng(seed).permutation(n).astype(np.intp)
    folds = tuple(np.sort(b) for b in np.array_split(order, K))
    for f in folds:
        f.setflags(write=False)
    return FoldPartition(n, folds)


# ---------------------------------------------------------------------
# Score functions
# ---------------------------------------------------------------------

ScoreEval = Callable[[Any, "NDArray[np.float64]", Any], "NDArray[np.float64]"]


@dataclass(frozen=True, eq=False)
class ScoreFunction:
    """Vector-valued moment function psi(x; theta, eta).

    ``evaluate(rows, theta, eta)`` returns an ``(n_rows, d_theta)`` array and
    ``analytic_jacobian(rows, theta, eta)`` an ``(n_rows, d_theta, d_theta)``
    array of d psi / d theta^T. ``rows`` exposes ``y``, ``d``, ``x`` and
    ``column(name)``. Set ``affine=True`` only when psi is affine in theta;
    the solver then uses an exact linear solve.
    """

    d_theta: int
    lower: NDArray[np.float64]
    upper: NDArray[np.float64]
    evaluate: ScoreEval
    analytic_jacobian: ScoreEval | None = None
    affine: bool = False
    name: str = "score"

    def __post_init__(self) -> None:
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.d_theta,)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.d_theta,)).copy()
        if np.any(lo >= hi):
            raise InvalidParam("theta box needs lower < upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def midpoint(self) -> NDArray[np.float64]:
        lo = np.where(np.isfinite(self.lower), self.lower, 0.0)
        hi = np.where(np.isfinite(self.upper), self.upper, 0.0)
        mid = np.where(np.isfinite(self.lower) & np.isfinite(self.upper), 0.5 * (lo + hi),
                       np.clip(0.0, self.lower, self.upper))
        return mid

    def project(self, theta: ArrayLike) -> NDArray[np.float64]:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def contains(self, theta: ArrayLike) -> bool:
        t = np.asarray(theta, dtype=float)
        return bool(np.all(t >= self.lower) and np.all(t <= self.upper))

    def values(self, rows: Any, theta: ArrayLike, eta: Any) -> NDArray[np.float64]:
        t = np.asarray(theta, dtype=float).reshape(self.d_theta)
        out = np.asarray(self.evaluate(rows, t, eta), dtype=float)
        if out.ndim == 1 and self.d_theta == 1:
            out = out[:, None]
        if out.shape != (rows.n, self.d_theta):
            raise DimensionMismatch(f"score returned shape {out.shape}, expected {(rows.n, self.d_theta)}")
        return out

    def jacobians(self, rows: Any, theta: ArrayLike, eta: Any) -> NDArray[np.float64]:
        if self.analytic_jacobian is None:
            raise InvalidParam(f"score {self.name!r} has no analytic Jacobian")
        t = np.asarray(theta, dtype=float).reshape(self.d_theta)
        out = np.asarray(self.analytic_jacobian(rows, t, eta), dtype=float)
        return out.reshape(rows.n, self.d_theta, self.d_theta)


def mean_score(lower: float = -1e6, upper: float = 1e6) -> ScoreFunction:
    """psi(x; theta) = y - theta, which identifies the outcome mean."""
    return ScoreFunction(
        d_theta=1,
        lower=np.array([lower]),
        upper=np.array([upper]),
        evaluate=lambda rows, theta, eta: (rows.y - theta[0])[:, None],
        analytic_jacobian=lambda rows, theta, eta: np.full((rows.n, 1, 1), -1.0),
        affine=True,
        name="mean",
    )


def regression_score(lower: float = -1e6, upper: float = 1e6) -> ScoreFunction:
    """psi(x; theta) = (y - theta d) d, the no-intercept least-squares score."""
    return ScoreFunction(
        d_theta=1,
        lower=np.array([lower]),
        upper=np.array([upper]),
        evaluate=lambda rows, theta, eta: ((rows.y - theta[0] * rows.d) * rows.d)[:, None],
        analytic_jacobian=lambda rows, theta, eta: (-(rows.d ** 2)).reshape(-1, 1, 1),
        affine=True,
        name="regression",
    )


def check_moment(
    score: ScoreFunction,
    data: Dataset,
    theta: ArrayLike,
    eta: Any = None,
    weights: ArrayLike | None = None,
    fold: ArrayLike | None = None,
) -> NDArray[np.float64]:
    """Weighted fold moment ``(1/m) sum_{i in fold} w_i psi(X_i; theta, eta)``.

    ``m`` is the fold size, never the weight total.
    """
    idx = np.arange(data.n) if fold is None else np.asarray(fold, dtype=np.intp)
    if idx.size == 0:
        raise DimensionMismatch("empty fold")
    if idx.min() < 0 or idx.max() >= data.n:
        raise DimensionMismatch("fold indices out of range")
    t = np.asarray(theta, dtype=float).reshape(-1)
    if t.size != score.d_theta:
        raise DimensionMismatch(f"theta has length {t.size}, score expects {score.d_theta}")
    psi = score.values(data._rows(idx), t, eta)
    if weights is None:
        return psi.mean(axis=0)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != data.n:
        raise DimensionMismatch(f"weights have length {w.size}, expected n={data.n}")
    return w[idx] @ psi / idx.size


# ---------------------------------------------------------------------
# Solver configuration and fit results
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    """Moment-solver settings.

    ``epsilon_n=None`` resolves to ``n ** -0.75`` at fit time.
    """

    epsilon_n: float | None = None
    max_iters: int = 100
    fd_step: float = 1e-6
    fallback_enabled: bool = True
    closed_form: bool = True

    def __post_init__(self) -> None:
        if self.epsilon_n is not None and not self.epsilon_n >= 0:
            raise InvalidParam("epsilon_n must be nonnegative")
        if not self.fd_step > 0:
            raise InvalidParam("fd_step must be positive")
        if self.max_iters < 1:
            raise InvalidParam("max_iters must be positive")

    def resolve(self, n: int) -> float:
        return float(n) ** -0.75 if self.epsilon_n is None else float(self.epsilon_n)


@dataclass(frozen=True, eq=False)
class DmlFit:
    theta_hat: NDArray[np.float64]
    fold_thetas: NDArray[np.float64]
    nuisances: tuple[Any, ...]
    jacobian_hat: NDArray[np.float64]
    sigma2_hat: NDArray[np.float64]
    fold_partition: FoldPartition
    achieved_norms: NDArray[np.float64]
    score: ScoreFunction
    data: Dataset
    epsilon_n: float
    fold_jacobians: NDArray[np.float64] = field(repr=False, default=None)  # type: ignore[assignment]
    learner: str = "none"

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def K(self) -> int:
        return self.fold_partition.K

    @property
    def se(self) -> NDArray[np.float64]:
        return np.sqrt(np.diag(self.sigma2_hat) / self.n)

    def to_dict(self) -> dict[str, Any]:
        return {
            "score": self.score.name,
            "learner": self.learner,
            "n": self.n,
            "K": self.K,
            "epsilon_n": self.epsilon_n,
            "theta_hat": self.theta_hat.tolist(),
            "fold_thetas": self.fold_thetas.tolist(),
            "achieved_norms": self.achieved_norms.tolist(),
            "jacobian_hat": self.jacobian_hat.tolist(),
            "sigma2_hat": self.sigma2_hat.tolist(),
            "se": self.se.tolist(),
        }
