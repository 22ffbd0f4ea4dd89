"""Monte Carlo studies: bootstrap consistency, interval coverage and weight rates.

Every random quantity is keyed by ``(seed, n, replication, ...)`` through
``child_seed``; replications are farmed out to worker processes and merged
in index order, so the worker count never changes a reported number.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .core import SolverConfig
from .dgp import DgpSpec, generate, oracle_learner, score_for
from .engine import MODES, bootstrap_dml, fit_dml
from .errors import ConfigError
from .inference import bootstrap_ci, ks_distance, normal, scaled_deviations, wald_ci
from .nuisance import LearnerSpec
from .weights import WeightScheme, child_rng, efron_an_reference, expected_max_weight, max_weight_samples

STUDIES = ("consistency", "coverage", "rates")
CSV_FIELDS = ("study", "dgp", "n", "K", "scheme", "method", "statistic", "value", "mc_se")


def child_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)).generate_state(1)[0])


# ---------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    study: str
    dgp: DgpSpec = field(default_factory=lambda: DgpSpec("mean_only", theta0=0.0))
    learner: str = "oracle"
    n_grid: tuple[int, ...] = (400,)
    K: int = 4
    schemes: tuple[str, ...] = ("efron",)
    B: int = 500
    M: int = 200
    level: float = 0.95
    methods: tuple[str, ...] = ("wald", "percentile")
    mode: str = "full_sample"
    c_mode: str = "theoretical"
    corrected: bool = True
    epsilon_n: float | None = None
    seed: int = 0
    workers: int = 1
    out: str | None = None
    dump_draws: bool = False

    def __post_init__(self) -> None:
        if self.study not in STUDIES:
            raise ConfigError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        if not self.n_grid:
            raise ConfigError("n_grid is empty")
        if self.study != "rates":
            bad = [n for n in self.n_grid if n % self.K]
            if bad or self.K < 2:
                raise ConfigError(f"every n must be divisible by K={self.K}; offending: {bad}")
        if self.B < 1 or self.M < 1:
            raise ConfigError("B and M must be >= 1")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.c_mode not in ("theoretical", "realized"):
            raise ConfigError(f"unknown c_mode {self.c_mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for m in self.methods:
            if m not in ("wald", "percentile", "basic", "studentized"):
                raise ConfigError(f"unknown interval method {m!r}")
        for s in self.schemes:
            WeightScheme.parse(s)
        if self.learner != "oracle":
            LearnerSpec.parse(self.learner)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> SimConfig:
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "study" not in raw:
            raise ConfigError("config needs a 'study' key")
        dgp = raw.get("dgp", {})
        if isinstance(dgp, dict):
            try:
                dgp = DgpSpec(**{k: tuple(v) if k == "noise_sd" else v for k, v in dgp.items()})
            except TypeError as exc:
                raise ConfigError(f"bad dgp block: {exc}") from None
            raw["dgp"] = dgp
        for key in ("n_grid", "schemes", "methods"):
            if key in raw:
                val = raw[key]
                raw[key] = tuple(val) if isinstance(val, (list, tuple)) else (val,)
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path, **overrides: Any) -> SimConfig:
        """Read a YAML or JSON config; ``None`` overrides are ignored."""
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(raw)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["dgp"] = self.dgp.to_dict()
        for key in ("n_grid", "schemes", "methods"):
            d[key] = list(d[key])
        return d

    def config_hash(self) -> str:
        """Hash of every setting that can change a number (excludes workers/out)."""
        d = self.to_dict()
        for key in ("workers", "out", "dump_draws"):
            d.pop(key)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def learner_spec(self) -> LearnerSpec:
        return oracle_learner(self.dgp) if self.learner == "oracle" else LearnerSpec.parse(self.learner)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(epsilon_n=self.epsilon_n)


# ---------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimReport:
    study: str
    records: tuple[dict[str, Any], ...]
    provenance: dict[str, Any]
    draws: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def value(self, statistic: str, *, n: int | None = None, scheme: str | None = None,
              method: str | None = None) -> float:
        rows = self.select(statistic, n=n, scheme=scheme, method=method)
        if len(rows) != 1:
            raise KeyError(f"{len(rows)} records match {statistic}/{n}/{scheme}/{method}")
        return rows[0]["value"]

    def select(self, statistic: str, *, n: int | None = None, scheme: str | None = None,
               method: str | None = None) -> list[dict[str, Any]]:
        return [r for r in self.records if r["statistic"] == statistic
                and (n is None or r["n"] == n)
                and (scheme is None or r["scheme"] == scheme)
                and (method is None or r["method"] == method)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in self.records:
            writer.writerow([_fmt(r[f]) for f in CSV_FIELDS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"study": self.study, "provenance": self.provenance,
                           "records": list(self.records)}, indent=2, sort_keys=True)

    def write(self, out_dir: str | Path, *, dump_draws: bool = False) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.csv", out / "report.json"]
        paths[0].write_text(self.to_csv())
        paths[1].write_text(self.to_json())
        if dump_draws:
            for cell, arr in sorted(self.draws.items()):
                p = out / f"draws_{cell}.csv"
                lines = ["replication,draw,value"]
                lines += [f"{r},{b},{_fmt(float(v))}" for r, row in enumerate(arr) for b, v in enumerate(row)]
                p.write_text("\n".join(lines) + "\n")
                paths.append(p)
        return paths


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _record(cfg: SimConfig, n: int, scheme: str, method: str, statistic: str,
            value: float, mc_se: float = float("nan")) -> dict[str, Any]:
    return {"study": cfg.study, "dgp": cfg.dgp.kind, "n": int(n), "K": cfg.K, "scheme": scheme,
            "method": method, "statistic": statistic, "value": float(value), "mc_se": float(mc_se)}


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    return float(x.mean()), se


def _sorted(records: list[dict[str, Any]]) -> tuple[dict[str, Any], ...]:
    return tuple(sorted(records, key=lambda r: (r["n"], r["scheme"], r["method"], r["statistic"])))


def _provenance(cfg: SimConfig) -> dict[str, Any]:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed, "version": __version__,
            "config": {k: v for k, v in cfg.to_dict().items() if k not in ("workers", "out")}}


def _map(fn: Any, tasks: list[Any], workers: int) -> list[Any]:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


# ---------------------------------------------------------------------
# Replication workers (top level so they pickle)
# ---------------------------------------------------------------------


def _fit_replication(cfg: SimConfig, n: int, r: int) -> Any:
    data, _ = generate(cfg.dgp, n, seed=child_seed(cfg.seed, n, r, 0))
    return fit_dml(data, score_for(cfg.dgp), cfg.learner_spec(), cfg.K, cfg.solver_config())


def _consistency_task(task: tuple[SimConfig, int, int]) -> dict[str, Any]:
    cfg, n, r = task
    fit = _fit_replication(cfg, n, r)
    out: dict[str, Any] = {
        "sampling": math.sqrt(n) * (fit.theta_hat[0] - cfg.dgp.theta0),
        "sigma2": float(fit.sigma2_hat[0, 0]),
        "schemes": {},
    }
    for j, label in enumerate(cfg.schemes):
        dist = bootstrap_dml(fit, WeightScheme.parse(label), cfg.B, cfg.mode, cfg.solver_config(),
                             seed=child_seed(cfg.seed, n, r, 1, j))
        scaled = scaled_deviations(dist, cfg.c_mode, corrected=cfg.corrected)[:, 0]
        out["schemes"][label] = {
            "scaled": scaled,
            "ks_normal": ks_distance(scaled, normal(0.0, out["sigma2"])),
            "degenerate_rate": dist.degenerate_rate,
            "c2_realized": float(dist.c2_realized.mean()),
        }
    return out


def _coverage_task(task: tuple[SimConfig, int, int]) -> dict[str, Any]:
    cfg, n, r = task
    fit = _fit_replication(cfg, n, r)
    theta0 = cfg.dgp.theta0
    res: dict[tuple[str, str], tuple[bool, float]] = {}
    if "wald" in cfg.methods:
        ci = wald_ci(fit, cfg.level)
        res[("none", "wald")] = (bool(ci.covers(theta0)[0]), float(ci.upper[0] - ci.lower[0]))
    boot_methods = [m for m in cfg.methods if m != "wald"]
    if boot_methods:
        for j, label in enumerate(cfg.schemes):
            dist = bootstrap_dml(fit, WeightScheme.parse(label), cfg.B, cfg.mode, cfg.solver_config(),
                                 seed=child_seed(cfg.seed, n, r, 1, j))
            for method in boot_methods:
                ci = bootstrap_ci(dist, cfg.level, method, cfg.c_mode, corrected=cfg.corrected)
                res[(label, method)] = (bool(ci.covers(theta0)[0]), float(ci.upper[0] - ci.lower[0]))
    return res


def _rates_task(task: tuple[SimConfig, int, int]) -> tuple[float, float, int]:
    cfg, n, j = task
    scheme = WeightScheme.parse(cfg.schemes[j])
    if scheme.kind in ("delete_h", "unit"):
        return expected_max_weight(scheme, n, cfg.M), 0.0, 1
    samples = max_weight_samples(scheme, n, cfg.M, seed=child_seed(cfg.seed, n, j))
    mean, se = _mean_se(samples)
    return mean, se, samples.size


# ---------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------


def study_consistency(cfg: SimConfig) -> SimReport:
    """KS distance of c^-1-scaled bootstrap laws to N(0, Sigma_hat) and to the
    pooled sampling law of sqrt(n)(theta_hat - theta0), averaged over replications."""
    cfg = replace(cfg, study="consistency")
    records: list[dict[str, Any]] = []
    dumps: dict[str, np.ndarray] = {}
    for n in cfg.n_grid:
        reps = _map(_consistency_task, [(cfg, n, r) for r in range(cfg.M)], cfg.workers)
        sampling = np.array([rep["sampling"] for rep in reps])
        mean_s, se_s = _mean_se(sampling)
        records.append(_record(cfg, n, "none", "none", "sampling_mean", mean_s, se_s))
        records.append(_record(cfg, n, "none", "none", "sampling_var", float(sampling.var(ddof=1)),
                               float(sampling.var(ddof=1) * math.sqrt(2.0 / max(cfg.M - 1, 1)))))
        sig = np.array([rep["sigma2"] for rep in reps])
        records.append(_record(cfg, n, "none", "none", "sigma2_hat_mean", *_mean_se(sig)))
        for label in cfg.schemes:
            cells = [rep["schemes"][label] for rep in reps]
            ks_norm = np.array([c["ks_normal"] for c in cells])
            ks_samp = np.array([ks_distance(c["scaled"], sampling) for c in cells])
            boot_var = np.array([c["scaled"].var(ddof=1) if c["scaled"].size > 1 else 0.0 for c in cells])
            method = "corrected" if cfg.corrected else "uncorrected"
            records.append(_record(cfg, n, label, method, "ks_normal", *_mean_se(ks_norm)))
            records.append(_record(cfg, n, label, method, "ks_sampling", *_mean_se(ks_samp)))
            records.append(_record(cfg, n, label, method, "boot_var", *_mean_se(boot_var)))
            records.append(_record(cfg, n, label, method, "degenerate_rate",
                                   *_mean_se(np.array([c["degenerate_rate"] for c in cells]))))
            records.append(_record(cfg, n, label, method, "c2_realized",
                                   *_mean_se(np.array([c["c2_realized"] for c in cells]))))
            if cfg.dump_draws:
                dumps[f"n{n}_{_safe(label)}"] = np.array([c["scaled"] for c in cells])
    return SimReport("consistency", _sorted(records), _provenance(cfg), dumps)


def study_coverage(cfg: SimConfig) -> SimReport:
    """Empirical coverage of theta0 and mean width per interval method and scheme."""
    cfg = replace(cfg, study="coverage")
    records: list[dict[str, Any]] = []
    for n in cfg.n_grid:
        reps = _map(_coverage_task, [(cfg, n, r) for r in range(cfg.M)], cfg.workers)
        for key in sorted(reps[0]):
            scheme, method = key
            hits = np.array([rep[key][0] for rep in reps], dtype=float)
            widths = np.array([rep[key][1] for rep in reps])
            p = float(hits.mean())
            records.append(_record(cfg, n, scheme, method, "coverage", p, math.sqrt(p * (1 - p) / cfg.M)))
            records.append(_record(cfg, n, scheme, method, "mean_width", *_mean_se(widths)))
    return SimReport("coverage", _sorted(records), _provenance(cfg))


def study_rates(cfg: SimConfig) -> SimReport:
    """Monte Carlo ``a_n`` per scheme and n (``M`` draws each), the lower-bound
    check ``a_n sqrt(n) >= 1`` and, for Efron, ``a_n sqrt(n) log log n / log n``."""
    cfg = replace(cfg, study="rates")
    if len(cfg.n_grid) < 3:
        raise ConfigError("rates study needs at least 3 sample sizes")
    tasks = [(cfg, n, j) for n in cfg.n_grid for j in range(len(cfg.schemes))]
    results = _map(_rates_task, tasks, cfg.workers)
    records: list[dict[str, Any]] = []
    for (_, n, j), (emax, se, _) in zip(tasks, results):
        label = WeightScheme.parse(cfg.schemes[j]).label
        root = math.sqrt(n)
        records.append(_record(cfg, n, label, "none", "an", emax / root, se / root))
        records.append(_record(cfg, n, label, "none", "an_sqrt_n", emax, se))
        records.append(_record(cfg, n, label, "none", "lower_bound_ok", float(emax >= 1.0 - 1e-12)))
        if WeightScheme.parse(label).kind == "efron":
            ref = efron_an_reference(n) * root
            records.append(_record(cfg, n, label, "none", "efron_ratio", emax / ref, se / ref))
    return SimReport("rates", _sorted(records), _provenance(cfg))


def run_study(cfg: SimConfig) -> SimReport:
    return {"consistency": study_consistency, "coverage": study_coverage, "rates": study_rates}[cfg.study](cfg)


def _safe(label: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in label)


__all__ = ["SimConfig", "SimReport", "child_rng", "child_seed", "run_study",
           "study_consistency", "study_coverage", "study_rates"]
