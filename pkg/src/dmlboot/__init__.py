"""Cross-fitted double/debiased machine learning with exchangeably weighted bootstrap."""

__version__ = "0.1.0"

from .core import (
    Dataset,
    DmlFit,
    FoldPartition,
    ScoreFunction,
    SolverConfig,
    check_moment,
    make_folds,
    mean_score,
    regression_score,
)
from .dgp import DgpSpec, generate, plr_score
from .engine import BootstrapDistribution, BootstrapDraw, bootstrap_dml, fit_dml, influence_values
from .inference import bootstrap_ci, estimate_sigma2, ks_distance, normal, wald_ci
from .nuisance import LearnerSpec, NuisanceModel, fit_nuisance, predict
from .solver import SolveResult, estimate_jacobian, solve_moment
from .weights import (
    WeightScheme,
    WeightVector,
    draw_weights,
    estimate_an,
    estimate_c2,
    theoretical_c2,
    weight_diagnostics,
)

__all__ = [
    "BootstrapDistribution",
    "BootstrapDraw",
    "Dataset",
    "DgpSpec",
    "DmlFit",
    "FoldPartition",
    "LearnerSpec",
    "NuisanceModel",
    "ScoreFunction",
    "SolveResult",
    "SolverConfig",
    "WeightScheme",
    "WeightVector",
    "bootstrap_ci",
    "bootstrap_dml",
    "check_moment",
    "draw_weights",
    "estimate_an",
    "estimate_c2",
    "estimate_jacobian",
    "estimate_sigma2",
    "fit_dml",
    "fit_nuisance",
    "generate",
    "influence_values",
    "ks_distance",
    "make_folds",
    "mean_score",
    "normal",
    "plr_score",
    "predict",
    "regression_score",
    "solve_moment",
    "theoretical_c2",
    "wald_ci",
    "weight_diagnostics",
]
