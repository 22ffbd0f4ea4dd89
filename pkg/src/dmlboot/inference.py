"""Sandwich variance, Wald and bootstrap intervals, and KS distances."""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import stats

from .errors import InsufficientDraws, InvalidParam, SingularJacobian
from .solver import is_singular
from .weights import theoretical_c2

if TYPE_CHECKING:
    from numpy.typing import ArrayLike, NDArray

    from .core import Dataset, DmlFit, FoldPartition, ScoreFunction

CI_METHODS = ("wald", "percentile", "basic", "studentized")
MIN_STABLE_DRAWS = 50


@dataclass(frozen=True, eq=False)
class AsymptoticEstimates:
    jacobian_hat: NDArray[np.float64]
    psi_outer_hat: NDArray[np.float64]
    sigma2_hat: NDArray[np.float64]

    @property
    def eigenvalues(self) -> NDArray[np.float64]:
        return np.linalg.eigvalsh(self.sigma2_hat)


def fold_psi(score: ScoreFunction, data: Dataset, folds: FoldPartition,
             nuisances: Sequence[Any], theta: ArrayLike) -> NDArray[np.float64]:
    """``psi(X_i; theta, eta_k(i))`` for every observation, as an ``(n, d)`` array."""
    out = np.empty((data.n, score.d_theta))
    for k, fold in enumerate(folds.folds):
        out[fold] = score.values(data._rows(fold), np.asarray(theta, dtype=float), nuisances[k])
    return out


def sandwich(jac: NDArray[np.float64], psi: NDArray[np.float64]) -> AsymptoticEstimates:
    """``J^-1 (n^-1 sum psi psi^T) J^-T`` symmetrized."""
    jac = np.atleast_2d(jac)
    if is_singular(jac):
        raise SingularJacobian("estimated Jacobian is singular")
    outer = psi.T @ psi / psi.shape[0]
    jinv = np.linalg.inv(jac)
    sigma = jinv @ outer @ jinv.T
    return AsymptoticEstimates(jac, outer, 0.5 * (sigma + sigma.T))


def estimate_sigma2(fit: DmlFit, data: Dataset | None = None) -> AsymptoticEstimates:
    """Plug-in sandwich at the cross-fit estimate with fold-specific nuisances."""
    data = fit.data if data is None else data
    psi = fold_psi(fit.score, data, fit.fold_partition, fit.nuisances, fit.theta_hat)
    return sandwich(fit.jacobian_hat, psi)


# ---------------------------------------------------------------------
# Intervals
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConfidenceInterval:
    method: str
    level: float
    lower: NDArray[np.float64]
    upper: NDArray[np.float64]
    c_used: float

    def __post_init__(self) -> None:
        if self.method not in CI_METHODS:
            raise InvalidParam(f"unknown interval method {self.method!r}")
        if not 0 < self.level < 1:
            raise InvalidParam("level must lie in (0, 1)")

    @property
    def half_width(self) -> NDArray[np.float64]:
        return 0.5 * (self.upper - self.lower)

    def covers(self, value: ArrayLike) -> NDArray[np.bool_]:
        v = np.asarray(value, dtype=float)
        return (self.lower <= v) & (v <= self.upper)

    def to_dict(self) -> dict[str, Any]:
        return {"method": self.method, "level": self.level, "lower": self.lower.tolist(),
                "upper": self.upper.tolist(), "c_used": self.c_used}


def _check_level(level: float) -> None:
    if not 0 < level < 1:
        raise InvalidParam(f"level must lie in (0, 1), got {level}")


def wald_interval(theta: ArrayLike, sigma2: ArrayLike, n: int, level: float) -> ConfidenceInterval:
    _check_level(level)
    t = np.asarray(theta, dtype=float).reshape(-1)
    se = np.sqrt(np.clip(np.diag(np.atleast_2d(sigma2)), 0.0, None) / n)
    z = stats.norm.ppf(0.5 + 0.5 * level)
    return ConfidenceInterval("wald", level, t - z * se, t + z * se, 1.0)


def wald_ci(fit: DmlFit, level: float = 0.95) -> ConfidenceInterval:
    """``theta_hat +/- z_{(1+level)/2} sqrt(diag(Sigma_hat) / n)``."""
    return wald_interval(fit.theta_hat, fit.sigma2_hat, fit.n, level)


def scaling_constant(dist: Any, c_mode: str = "theoretical") -> float:
    """The c used to rescale bootstrap deviations.

    ``theoretical`` uses the scheme's limit constant at the size each weight
    vector is drawn at (n, or m in within-fold mode); ``realized`` uses the
    mean realized ``n^-1 sum (W_i - 1)^2`` over the draws.
    """
    if c_mode == "theoretical":
        size = dist.base_fit.n if dist.mode == "full_sample" else dist.base_fit.fold_partition.m
        return math.sqrt(theoretical_c2(dist.scheme, size))
    if c_mode == "realized":
        c2 = float(np.mean(dist.c2_realized))
        if not c2 > 0:
            raise InvalidParam("realized c^2 is zero; use c_mode='theoretical'")
        return math.sqrt(c2)
    raise InvalidParam(f"unknown c_mode {c_mode!r}")


def bootstrap_interval(
    theta: ArrayLike,
    draws: ArrayLike,
    level: float,
    method: str,
    c: float,
    sigma2: ArrayLike | None = None,
    n: int | None = None,
) -> ConfidenceInterval:
    """Interval from raw bootstrap estimates ``draws`` (shape ``(B, d)``).

    Deviations ``(draw - theta) / c`` are formed first; quantiles use linear
    interpolation between order statistics (Hyndman-Fan type 7).
    ``percentile`` is ``theta + q``, ``basic`` is ``theta - q`` reflected, and
    ``studentized`` pivots on ``sqrt(n) dev / sqrt(diag sigma2)`` and scales
    back by the plug-in standard error. With one fixed ``sigma2`` the
    studentized endpoints coincide with the basic ones.
    """
    _check_level(level)
    if method not in ("percentile", "basic", "studentized"):
        raise InvalidParam(f"unknown bootstrap interval method {method!r}")
    t = np.asarray(theta, dtype=float).reshape(-1)
    d = np.asarray(draws, dtype=float).reshape(-1, t.size)
    if d.shape[0] < 2:
        raise InsufficientDraws(f"need at least 2 draws, got {d.shape[0]}")
    if d.shape[0] < MIN_STABLE_DRAWS:
        warnings.warn(f"only {d.shape[0]} bootstrap draws; quantiles are unstable below "
                      f"{MIN_STABLE_DRAWS}", RuntimeWarning, stacklevel=2)
    if not c > 0:
        raise InvalidParam("scaling constant must be positive")
    alpha = 1.0 - level
    probs = [0.5 * alpha, 1.0 - 0.5 * alpha]
    dev = (d - t) / c
    if method == "percentile":
        lo, hi = np.quantile(dev, probs, axis=0)
        return ConfidenceInterval(method, level, t + lo, t + hi, c)
    if method == "basic":
        lo, hi = np.quantile(dev, probs, axis=0)
        return ConfidenceInterval(method, level, t - hi, t - lo, c)
    if sigma2 is None or n is None:
        raise InvalidParam("studentized intervals need sigma2 and n")
    sd = np.sqrt(np.diag(np.atleast_2d(sigma2)))
    se = sd / math.sqrt(n)
    safe = np.where(sd > 0, sd, 1.0)
    pivots = math.sqrt(n) * dev / safe
    lo, hi = np.quantile(pivots, probs, axis=0)
    lo = np.where(sd > 0, lo, 0.0)
    hi = np.where(sd > 0, hi, 0.0)
    return ConfidenceInterval(method, level, t - hi * se, t - lo * se, c)


def bootstrap_ci(
    dist: Any,
    level: float = 0.95,
    method: str = "percentile",
    c_mode: str = "theoretical",
    *,
    corrected: bool = True,
) -> ConfidenceInterval:
    """c^-1-corrected bootstrap interval from a ``BootstrapDistribution``.

    ``corrected=False`` skips the rescaling (c = 1); it exists to show why the
    correction is needed.
    """
    c = scaling_constant(dist, c_mode) if corrected else 1.0
    fit = dist.base_fit
    return bootstrap_interval(fit.theta_hat, dist.thetas, level, method, c, fit.sigma2_hat, fit.n)


def scaled_deviations(dist: Any, c_mode: str = "theoretical", *, corrected: bool = True) -> NDArray[np.float64]:
    """``sqrt(n) c^-1 (theta* - theta_hat)`` for every draw, shape ``(B, d)``."""
    c = scaling_constant(dist, c_mode) if corrected else 1.0
    fit = dist.base_fit
    return math.sqrt(fit.n) * (dist.thetas - fit.theta_hat) / c


# ---------------------------------------------------------------------
# Kolmogorov-Smirnov distance
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class NormalReference:
    mean: float = 0.0
    var: float = 1.0

    def cdf(self, t: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.var <= 0:
            return (t >= self.mean).astype(float)
        return stats.norm.cdf(t, loc=self.mean, scale=math.sqrt(self.var))

    def cdf_left(self, t: NDArray[np.float64]) -> NDArray[np.float64]:
        """Left limit ``F(t-)``; differs from ``cdf`` only for the point mass."""
        if self.var <= 0:
            return (t > self.mean).astype(float)
        return self.cdf(t)


def normal(mean: float = 0.0, var: float = 1.0) -> NormalReference:
    if var < 0:
        raise InvalidParam("variance must be nonnegative")
    return NormalReference(float(mean), float(var))


def ks_distance(sample: ArrayLike, reference: NormalReference | ArrayLike) -> float:
    """``sup_t |F_sample(t) - F_ref(t)|`` for a normal law or another sample."""
    x = np.sort(np.asarray(sample, dtype=float).reshape(-1))
    n = x.size
    if n == 0:
        raise InvalidParam("sample must be nonempty")
    if isinstance(reference, NormalReference):
        i = np.arange(1, n + 1)
        return float(max(np.max(i / n - reference.cdf(x)), np.max(reference.cdf_left(x) - (i - 1) / n), 0.0))
    y = np.sort(np.asarray(reference, dtype=float).reshape(-1))
    if y.size == 0:
        raise InvalidParam("reference sample must be nonempty")
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / n
    fy = np.searchsorted(y, grid, side="right") / y.size
    return float(np.max(np.abs(fx - fy)))
