"""Synthetic data with known theta_0 and eta_0, and the partially linear score.

The partially linear regression (PLR) model is

    D = m0(X) + v,    Y = theta0 * D + g0(X) + u,

with nuisance eta = (l, m), ``l(x) = E[Y | X=x] = theta0 m0(x) + g0(x)`` and
``m(x) = E[D | X=x]``. Its orthogonal score is
``psi = (y - l(x) - theta (d - m(x))) (d - m(x))``.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from .core import Dataset, ScoreFunction, mean_score
from .errors import InvalidSpec
from .nuisance import LearnerSpec, NuisanceModel
from .weights import child_rng

if TYPE_CHECKING:
    from numpy.typing import NDArray

DGP_KINDS = ("plr_linear", "plr_sparse", "mean_only")
TRUNCATION = 6.0


@dataclass(frozen=True)
class DgpSpec:
    """Data-generating process description.

    ``noise_sd = (sigma_u, sigma_v)``; sigma_u may be 0 (noiseless outcome),
    sigma_v must be positive or the score's Jacobian vanishes. For
    ``mean_only`` only ``sigma_u`` is used, as the outcome sd.
    Coefficients are a function of ``seed`` alone.
    """

    kind: str = "plr_linear"
    theta0: float = 1.5
    dim_x: int = 5
    sparsity: int = 3
    noise_sd: tuple[float, float] = (1.0, 1.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in DGP_KINDS:
            raise InvalidSpec(f"unknown DGP {self.kind!r}; expected one of {DGP_KINDS}")
        if not np.isfinite(self.theta0):
            raise InvalidSpec("theta0 must be finite")
        if self.dim_x < 1:
            raise InvalidSpec("dim_x must be >= 1")
        su, sv = self.noise_sd
        if su < 0 or (self.kind != "mean_only" and not sv > 0):
            raise InvalidSpec(f"need sigma_u >= 0 and sigma_v > 0, got {self.noise_sd}")
        if self.kind == "plr_sparse" and not 1 <= self.sparsity <= self.dim_x:
            raise InvalidSpec("sparsity must lie in [1, dim_x]")
        object.__setattr__(self, "noise_sd", (float(su), float(sv)))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "theta0": self.theta0, "dim_x": self.dim_x,
                "sparsity": self.sparsity, "noise_sd": list(self.noise_sd), "seed": self.seed}


@dataclass(frozen=True, eq=False)
class PlrCoefficients:
    beta_m: NDArray[np.float64]
    beta_g: NDArray[np.float64]

    def m0(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return x @ self.beta_m

    def g0(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return x @ self.beta_g


def coefficients(spec: DgpSpec) -> PlrCoefficients:
    rng = child_rng(spec.seed, 0)
    p = spec.dim_x
    if spec.kind == "plr_sparse":
        bm, bg = np.zeros(p), np.zeros(p)
        for beta in (bm, bg):
            active = rng.choice(p, size=spec.sparsity, replace=False)
            beta[active] = rng.choice([-1.0, 1.0], size=spec.sparsity) * rng.uniform(0.5, 1.0, spec.sparsity)
        return PlrCoefficients(bm, bg)
    scale = 1.0 / np.sqrt(p)
    return PlrCoefficients(rng.normal(0.0, scale, p), rng.normal(0.0, scale, p))


def oracle_learner(spec: DgpSpec) -> LearnerSpec:
    """Learner exposing the true nuisance functions of ``spec``."""
    if spec.kind == "mean_only":
        return LearnerSpec("none")
    coef = coefficients(spec)
    theta0 = spec.theta0
    fns: dict[str, Callable[[NDArray[np.float64]], NDArray[np.float64]]] = {
        "outcome": lambda x: theta0 * coef.m0(x) + coef.g0(x),
        "treatment": coef.m0,
    }
    return LearnerSpec("oracle", functions=fns)


@dataclass(frozen=True, eq=False)
class Population:
    """Raw draws including the latent noise, for population-level checks."""

    x: NDArray[np.float64]
    u: NDArray[np.float64]
    v: NDArray[np.float64]
    d: NDArray[np.float64] = field(repr=False)
    y: NDArray[np.float64] = field(repr=False)


def draw_population(spec: DgpSpec, n: int, seed: int | None = None, *,
                    antithetic: bool = False) -> Population:
    """Draw ``n`` units. ``antithetic`` pairs each ``(x, u, v)`` with ``(x, -u, -v)``."""
    if n < 2:
        raise InvalidSpec(f"need n >= 2, got {n}")
    rng = child_rng(spec.seed if seed is None else seed, 1)
    su, sv = spec.noise_sd
    half = (n + 1) // 2 if antithetic else n
    if spec.kind == "mean_only":
        x = np.zeros((half, 0))
    else:
        x = np.clip(rng.standard_normal((half, spec.dim_x)), -TRUNCATION, TRUNCATION)
    u = su * rng.standard_normal(half)
    v = sv * rng.standard_normal(half) if spec.kind != "mean_only" else np.zeros(half)
    if antithetic:
        x, u, v = (np.concatenate([a, a])[:n] for a in (x, u, v))
        u[half:] *= -1.0
        v[half:] *= -1.0
    if spec.kind == "mean_only":
        y = spec.theta0 + u
        return Population(x, u, v, np.zeros(n), y)
    coef = coefficients(spec)
    d = coef.m0(x) + v
    y = spec.theta0 * d + coef.g0(x) + u
    return Population(x, u, v, d, y)


def generate(spec: DgpSpec, n: int, seed: int | None = None) -> tuple[Dataset, NuisanceModel]:
    """Sample a dataset of size ``n`` and the oracle nuisance model.

    ``seed`` selects the sample; it defaults to ``spec.seed``.
    """
    pop = draw_population(spec, n, seed)
    if spec.kind == "mean_only":
        data = Dataset.from_arrays(pop.y)
    else:
        data = Dataset.from_arrays(pop.y, pop.d, pop.x)
    learner = oracle_learner(spec)
    return data, NuisanceModel(learner, dict(learner.functions or {}), np.arange(0, dtype=np.intp))


def score_for(spec: DgpSpec) -> ScoreFunction:
    return mean_score() if spec.kind == "mean_only" else plr_score()


def population_sigma2(spec: DgpSpec) -> float:
    """Asymptotic variance of sqrt(n)(theta_hat - theta0) under oracle nuisances."""
    su, sv = spec.noise_sd
    if spec.kind == "mean_only":
        return su ** 2
    return su ** 2 / sv ** 2


# ---------------------------------------------------------------------
# Partially linear score
# ---------------------------------------------------------------------


def _plr_eval(rows: Any, theta: NDArray[np.float64], eta: Any) -> NDArray[np.float64]:
    x = rows.x
    resid_d = rows.d - eta.predict("treatment", x)
    return ((rows.y - eta.predict("outcome", x) - theta[0] * resid_d) * resid_d)[:, None]


def _plr_jac(rows: Any, theta: NDArray[np.float64], eta: Any) -> NDArray[np.float64]:
    resid_d = rows.d - eta.predict("treatment", rows.x)
    return (-(resid_d ** 2)).reshape(-1, 1, 1)


def plr_score(lower: float = -1e6, upper: float = 1e6) -> ScoreFunction:
    """Orthogonal PLR score with analytic Jacobian ``-(d - m(x))^2``."""
    return ScoreFunction(1, np.array([lower]), np.array([upper]), _plr_eval, _plr_jac,
                         affine=True, name="plr")


def _naive_eval(rows: Any, theta: NDArray[np.float64], eta: Any) -> NDArray[np.float64]:
    # g(x) = l(x) - theta m(x) under the model; not orthogonal in m
    x = rows.x
    g = eta.predict("outcome", x) - theta[0] * eta.predict("treatment", x)
    return ((rows.y - theta[0] * rows.d - g) * rows.d)[:, None]


def naive_plr_score() -> ScoreFunction:
    """Non-orthogonal regression-adjustment score, for contrast in checks."""
    return ScoreFunction(1, np.array([-1e6]), np.array([1e6]), _naive_eval, name="naive_plr")


# ---------------------------------------------------------------------
# Orthogonality probe
# ---------------------------------------------------------------------


class PerturbedNuisance:
    """``eta + r * delta`` in one role's direction."""

    def __init__(self, base: Any, role: str, direction: Callable[[NDArray[np.float64]], NDArray[np.float64]],
                 r: float) -> None:
        self.base = base
        self.role = role
        self.direction = direction
        self.r = r

    def predict(self, role: str, x: NDArray[np.float64]) -> Any:
        out = self.base.predict(role, x)
        if role == self.role:
            out = out + self.r * self.direction(np.atleast_2d(x))
        return out


DEFAULT_DIRECTIONS: dict[str, Callable[[NDArray[np.float64]], NDArray[np.float64]]] = {
    "outcome": lambda x: np.sin(x[:, 0]),
    "treatment": lambda x: np.cos(x[:, 0]),
}


def orthogonality_probe(
    spec: DgpSpec,
    n_pop: int = 1_000_000,
    seed: int = 0,
    r: float = 1e-4,
    score: ScoreFunction | None = None,
    directions: dict[str, Callable[[NDArray[np.float64]], NDArray[np.float64]]] | None = None,
    antithetic: bool = True,
) -> dict[str, float]:
    """Two-sided difference estimate of the Gateaux derivative of E[psi] at the truth.

    Returns the derivative's norm for each nuisance direction. The Monte Carlo
    population uses antithetic noise pairs by default, which cancels the pure
    noise terms and leaves any systematic first-order dependence visible.
    """
    if spec.kind == "mean_only":
        raise InvalidSpec("mean_only has no nuisance to perturb")
    score = score or plr_score()
    directions = directions or DEFAULT_DIRECTIONS
    pop = draw_population(spec, n_pop, seed, antithetic=antithetic)
    data = Dataset.from_arrays(pop.y, pop.d, pop.x)
    learner = oracle_learner(spec)
    eta0 = NuisanceModel(learner, dict(learner.functions or {}), np.arange(0, dtype=np.intp))
    rows = data._rows(np.arange(data.n))
    theta0 = np.array([spec.theta0])
    out = {}
    for role, delta in directions.items():
        plus = score.values(rows, theta0, PerturbedNuisance(eta0, role, delta, r)).mean(axis=0)
        minus = score.values(rows, theta0, PerturbedNuisance(eta0, role, delta, -r)).mean(axis=0)
        out[role] = float(np.linalg.norm((plus - minus) / (2.0 * r)))
    return out
