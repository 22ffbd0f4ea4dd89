"""Exchangeable bootstrap weights and the weight-law diagnostics c^2 and a_n.

Every sampler returns nonnegative weights summing to ``n``. Monte Carlo
estimators draw rep ``r`` from ``child_rng(seed, r)``, so results depend only
on ``(scheme, n, reps, seed)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from .errors import InvalidParam

if TYPE_CHECKING:
    from numpy.typing import NDArray

KINDS = ("efron", "multiplier", "double", "delete_h", "unit")


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def _as_rng(rng: np.random.Generator | int | None) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), rng


@dataclass(frozen=True)
class WeightScheme:
    """A named exchangeable weight law.

    ``multiplier`` uses Gamma(alpha, alpha) multipliers (alpha=1 is the
    Bayesian bootstrap). ``delete_h`` takes either an explicit ``h`` or a
    deletion ``fraction`` resolved as ``h = round(fraction * n)``. ``unit``
    puts weight 1 on every observation; it is a diagnostic, not a bootstrap.
    """

    kind: str
    alpha: float = 1.0
    fraction: float | None = None
    h: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise InvalidParam(f"unknown weight scheme {self.kind!r}; expected one of {KINDS}")
        if self.kind == "multiplier" and not self.alpha > 0:
            raise InvalidParam(f"alpha must be positive, got {self.alpha}")
        if self.kind == "delete_h":
            if (self.fraction is None) == (self.h is None):
                raise InvalidParam("delete_h needs exactly one of fraction or h")
            if self.fraction is not None and not 0 < self.fraction < 1:
                raise InvalidParam(f"delete_h fraction must lie in (0, 1), got {self.fraction}")
            if self.h is not None and self.h < 1:
                raise InvalidParam(f"delete_h needs h >= 1, got {self.h}")

    @classmethod
    def efron(cls) -> WeightScheme:
        return cls("efron")

    @classmethod
    def multiplier(cls, alpha: float = 1.0) -> WeightScheme:
        return cls("multiplier", alpha=alpha)

    @classmethod
    def bayesian(cls) -> WeightScheme:
        return cls("multiplier", alpha=1.0)

    @classmethod
    def double(cls) -> WeightScheme:
        return cls("double")

    @classmethod
    def delete_h(cls, fraction: float | None = None, h: int | None = None) -> WeightScheme:
        return cls("delete_h", fraction=fraction, h=h)

    @classmethod
    def unit(cls) -> WeightScheme:
        return cls("unit")

    @classmethod
    def parse(cls, text: str) -> WeightScheme:
        """Parse ``efron``, ``bayesian``, ``multiplier:<alpha>``, ``double``,
        ``delete_h:<fraction>``, ``delete_h:h=<int>`` or ``unit``."""
        name, _, arg = text.strip().partition(":")
        name = name.lower().replace("-", "_")
        try:
            if name == "efron":
                return cls.efron()
            if name == "bayesian":
                return cls.bayesian()
            if name == "multiplier":
                return cls.multiplier(float(arg) if arg else 1.0)
            if name == "double":
                return cls.double()
            if name == "delete_h":
                if arg.startswith("h="):
                    return cls.delete_h(h=int(arg[2:]))
                return cls.delete_h(fraction=float(arg) if arg else 0.5)
            if name == "unit":
                return cls.unit()
        except ValueError as exc:
            raise InvalidParam(f"bad scheme argument in {text!r}: {exc}") from None
        raise InvalidParam(f"unknown weight scheme {text!r}")

    @property
    def label(self) -> str:
        if self.kind == "multiplier":
            return f"multiplier:{self.alpha:g}"
        if self.kind == "delete_h":
            return f"delete_h:{self.fraction:g}" if self.fraction is not None else f"delete_h:h={self.h}"
        return self.kind

    def h_for(self, n: int) -> int:
        """Deletion size at sample size ``n`` (delete_h only)."""
        if self.kind != "delete_h":
            raise InvalidParam(f"{self.kind} has no deletion size")
        h = self.h if self.h is not None else int(math.floor(self.fraction * n + 0.5))
        if not 1 <= h <= n - 1:
            raise InvalidParam(f"delete_h needs 1 <= h <= n-1, got h={h}, n={n}")
        return h


@dataclass(frozen=True, eq=False)
class WeightVector:
    w: NDArray[np.float64]
    scheme: WeightScheme
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.w.size

    @property
    def c2_realized(self) -> float:
        return float(np.mean((self.w - 1.0) ** 2))


# ---------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------


def _efron(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    # numpy draws the multinomial by sequential conditional binomials, O(n)
    return rng.multinomial(n, np.full(n, 1.0 / n)).astype(np.float64)


def efron_by_indices(n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    """Efron weights as resample counts: draw n indices uniformly, count hits."""
    return np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.float64)


def _draw(scheme: WeightScheme, n: int, rng: np.random.Generator) -> NDArray[np.float64]:
    kind = scheme.kind
    if kind == "efron":
        return _efron(n, rng)
    if kind == "multiplier":
        y = rng.gamma(scheme.alpha, 1.0 / scheme.alpha, size=n)
        return y / y.mean()
    if kind == "double":
        first = rng.multinomial(n, np.full(n, 1.0 / n))
        return rng.multinomial(n, first / n).astype(np.float64)
    if kind == "delete_h":
        h = scheme.h_for(n)
        w = np.full(n, n / (n - h))
        w[rng.choice(n, size=h, replace=False)] = 0.0
        return w
    return np.ones(n)


def draw_weights(
    scheme: WeightScheme, n: int, rng: np.random.Generator | int | None = None,
) -> WeightVector:
    """One draw of an ``n``-vector from the scheme's law."""
    if n < 2:
        raise InvalidParam(f"need n >= 2, got {n}")
    gen, seed = _as_rng(rng)
    return WeightVector(_draw(scheme, n, gen), scheme, seed)


def draw_weight_matrix(scheme: WeightScheme, n: int, seed: int, keys: range | list[int]) -> NDArray[np.float64]:
    """Stack draws for rep keys ``keys``; row ``j`` uses ``child_rng(seed, keys[j])``."""
    if n < 2:
        raise InvalidParam(f"need n >= 2, got {n}")
    out = np.empty((len(keys), n))
    for j, key in enumerate(keys):
        out[j] = _draw(scheme, n, child_rng(seed, key))
    return out


# ---------------------------------------------------------------------
# Weight-law constants
# ---------------------------------------------------------------------


def theoretical_c2(scheme: WeightScheme, n: int | None = None) -> float:
    """Limit of ``n^-1 sum (W_i - 1)^2`` for the scheme.

    For delete_h with ``n`` given the realized ratio ``h/(n-h)`` is used,
    otherwise ``fraction/(1-fraction)``. ``unit`` returns 1 by convention so
    that it never rescales draws.
    """
    kind = scheme.kind
    if kind == "efron":
        return 1.0
    if kind == "multiplier":
        return 1.0 / scheme.alpha
    if kind == "double":
        return 2.0
    if kind == "delete_h":
        if n is not None:
            h = scheme.h_for(n)
            return h / (n - h)
        if scheme.fraction is None:
            raise InvalidParam("delete_h with explicit h needs n to define c^2")
        return scheme.fraction / (1.0 - scheme.fraction)
    return 1.0


def estimate_c2(scheme: WeightScheme, n: int, reps: int, seed: int = 0) -> float:
    """Monte Carlo mean over reps of ``n^-1 sum (W_i - 1)^2``."""
    return float(np.mean(c2_samples(scheme, n, reps, seed)))


def c2_samples(scheme: WeightScheme, n: int, reps: int, seed: int = 0) -> NDArray[np.float64]:
    if reps < 1:
        raise InvalidParam("reps must be >= 1")
    out = np.empty(reps)
    for r in range(reps):
        w = draw_weights(scheme, n, child_rng(seed, r)).w
        out[r] = np.mean((w - 1.0) ** 2)
    return out


def max_weight_samples(scheme: WeightScheme, n: int, reps: int, seed: int = 0) -> NDArray[np.float64]:
    """Per-rep ``max_i W_i``."""
    if reps < 1:
        raise InvalidParam("reps must be >= 1")
    out = np.empty(reps)
    for r in range(reps):
        out[r] = draw_weights(scheme, n, child_rng(seed, r)).w.max()
    return out


def expected_max_weight(scheme: WeightScheme, n: int, reps: int, seed: int = 0) -> float:
    """``E[max_i W_i]``; exact for delete_h (``n/(n-h)``) and unit (1)."""
    if scheme.kind == "delete_h":
        return n / (n - scheme.h_for(n))
    if scheme.kind == "unit":
        return 1.0
    return float(np.mean(max_weight_samples(scheme, n, reps, seed)))


def estimate_an(scheme: WeightScheme, n: int, reps: int, seed: int = 0) -> float:
    """Bootstrap rate term ``n^{-1/2} E[max_i W_i]``."""
    return expected_max_weight(scheme, n, reps, seed) / math.sqrt(n)


def efron_an_reference(n: int) -> float:
    """Leading-order Efron rate ``log n / (sqrt(n) log log n)``."""
    return math.log(n) / (math.sqrt(n) * math.log(math.log(n)))


# ---------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class WeightDiagnostics:
    scheme: WeightScheme
    n: int
    reps: int
    per_index_mean: NDArray[np.float64]
    min_weight: float
    max_weight: float
    tail: dict[float, float] = field(default_factory=dict)
    sum_residual: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "scheme": self.scheme.label,
            "n": self.n,
            "reps": self.reps,
            "per_index_mean_min": float(self.per_index_mean.min()),
            "per_index_mean_max": float(self.per_index_mean.max()),
            "min_weight": self.min_weight,
            "max_weight": self.max_weight,
            "tail": {repr(float(t)): p for t, p in self.tail.items()},
            "sum_residual": self.sum_residual,
        }


def weight_diagnostics(
    scheme: WeightScheme,
    n: int,
    reps: int,
    seed: int = 0,
    thresholds: tuple[float, ...] = (1.0, 2.0, 3.0, 5.0, 10.0),
) -> WeightDiagnostics:
    """Sanity statistics over ``reps`` draws.

    The tail table pools all coordinates: by exchangeability each is a draw of
    ``W_1``.
    """
    if reps < 2:
        raise InvalidParam("weight_diagnostics needs reps >= 2")
    total = np.zeros(n)
    lo, hi, resid = math.inf, -math.inf, 0.0
    counts = np.zeros(len(thresholds))
    t_arr = np.asarray(thresholds, dtype=float)
    for r in range(reps):
        w = draw_weights(scheme, n, child_rng(seed, r)).w
        total += w
        lo = min(lo, float(w.min()))
        hi = max(hi, float(w.max()))
        resid = max(resid, abs(float(w.sum()) - n))
        counts += (w[:, None] >= t_arr).sum(axis=0)
    tail = {float(t): float(c / (reps * n)) for t, c in zip(thresholds, counts)}
    return WeightDiagnostics(scheme, n, reps, total / reps, lo, hi, tail, resid)
