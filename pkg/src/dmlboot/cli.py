"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any

import yaml

from .core import Dataset, SolverConfig, mean_score
from .dgp import plr_score
from .engine import bootstrap_dml, fit_dml
from .errors import ConfigError, NumericalError
from .inference import bootstrap_ci, wald_ci
from .nuisance import LearnerSpec
from .simharness import SimConfig, run_study
from .weights import WeightScheme

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SCORES = {"mean": mean_score, "plr": plr_score}

log = logging.getLogger("dmlboot")


def _read_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        raw = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    return raw


def _merged(args: argparse.Namespace, keys: tuple[str, ...]) -> dict[str, Any]:
    cfg = _read_config(args.config)
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _fit_from(cfg: dict[str, Any]) -> Any:
    if "data" not in cfg or "outcome" not in cfg:
        raise ConfigError("fit needs 'data' (CSV path) and 'outcome'")
    covs = cfg.get("covariates")
    if isinstance(covs, str):
        covs = [c for c in covs.split(",") if c]
    data = Dataset.read_csv(cfg["data"], cfg["outcome"], cfg.get("treatment"), covs)
    score_name = cfg.get("score", "plr" if cfg.get("treatment") else "mean")
    if score_name not in SCORES:
        raise ConfigError(f"unknown score {score_name!r}; expected one of {sorted(SCORES)}")
    learner = LearnerSpec.parse(cfg.get("learner", "lasso" if score_name == "plr" else "none"))
    solver = SolverConfig(epsilon_n=cfg.get("epsilon_n"))
    return fit_dml(data, SCORES[score_name](), learner, int(cfg.get("K", 2)), solver)


def _emit(payload: dict[str, Any], out: str | None, name: str) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        (path / name).write_text(text + "\n")
    print(text)


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = _merged(args, ("data", "outcome", "treatment", "covariates", "score", "learner", "K", "epsilon_n"))
    fit = _fit_from(cfg)
    payload = fit.to_dict()
    payload["wald"] = wald_ci(fit, float(cfg.get("level", 0.95))).to_dict()
    _emit(payload, args.out, "fit.json")
    return EXIT_OK


def cmd_bootstrap(args: argparse.Namespace) -> int:
    cfg = _merged(args, ("data", "outcome", "treatment", "covariates", "score", "learner", "K",
                         "epsilon_n", "scheme", "B", "mode", "level", "seed", "c_mode"))
    fit = _fit_from(cfg)
    scheme = WeightScheme.parse(str(cfg.get("scheme", "efron")))
    dist = bootstrap_dml(fit, scheme, int(cfg.get("B", 1000)), cfg.get("mode", "full_sample"),
                         seed=int(cfg.get("seed", 0)), workers=args.workers)
    level = float(cfg.get("level", 0.95))
    c_mode = cfg.get("c_mode", "theoretical")
    payload = {
        "fit": fit.to_dict(),
        "bootstrap": dist.summary(),
        "intervals": [wald_ci(fit, level).to_dict()]
        + [bootstrap_ci(dist, level, m, c_mode).to_dict() for m in ("percentile", "basic", "studentized")],
    }
    _emit(payload, args.out, "bootstrap.json")
    return EXIT_OK


def _run_sim(args: argparse.Namespace, study: str) -> int:
    overrides = {"study": study, "seed": args.seed, "workers": args.workers, "out": args.out}
    if args.config:
        cfg = SimConfig.load(args.config, **overrides)
    else:
        cfg = SimConfig.from_dict({k: v for k, v in overrides.items() if v is not None})
    report = run_study(cfg)
    out = cfg.out or "."
    for p in report.write(out, dump_draws=cfg.dump_draws):
        log.info("wrote %s", p)
    print(report.to_csv(), end="")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    return _run_sim(args, args.study)


def cmd_rates(args: argparse.Namespace) -> int:
    return _run_sim(args, "rates")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dmlboot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", help="output directory")

    def data_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--data", help="CSV file with a header row")
        p.add_argument("--outcome")
        p.add_argument("--treatment")
        p.add_argument("--covariates", help="comma-separated; default: all remaining columns")
        p.add_argument("--score", choices=sorted(SCORES))
        p.add_argument("--learner", help="ridge[:lam], lasso[:lam], knn[:k] or none")
        p.add_argument("--K", type=int)
        p.add_argument("--epsilon-n", dest="epsilon_n", type=float)
        p.add_argument("--level", type=float)

    p_fit = sub.add_parser("fit", help="cross-fitted DML estimate from a CSV")
    common(p_fit)
    data_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_boot = sub.add_parser("bootstrap", help="fit plus exchangeably weighted bootstrap")
    common(p_boot)
    data_flags(p_boot)
    p_boot.add_argument("--scheme", help="efron, bayesian, multiplier:<a>, double, delete_h:<frac>")
    p_boot.add_argument("--B", type=int)
    p_boot.add_argument("--mode", choices=["full_sample", "within_fold"])
    p_boot.add_argument("--c-mode", dest="c_mode", choices=["theoretical", "realized"])
    p_boot.set_defaults(func=cmd_bootstrap)

    p_sim = sub.add_parser("simulate", help="Monte Carlo consistency or coverage study")
    p_sim.add_argument("study", choices=["consistency", "coverage"])
    common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_rates = sub.add_parser("rates", help="bootstrap rate term a_n across schemes and n")
    common(p_rates)
    p_rates.set_defaults(func=cmd_rates)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
