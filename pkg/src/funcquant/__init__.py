"""Penalized B-spline quantile regression with a functional covariate."""

from .bspline import SplineBasis, make_basis, penalty_matrix, eval_basis, eval_basis_deriv, approximate_function
from .funcdata import (
    CurveSample,
    DataError,
    FunctionalDataset,
    NearSingularWarning,
    UncenteredDataWarning,
    assemble_system,
    design_matrix,
    inner_product,
    load_dataset,
)
from .solver import CheckLoss, FitDiagnostics, SolverConfig, SolverSingularityError, irls_fit, subgradient_oracle
from .estimator import FitConfig, QuantileModel, fit, predict, select_rho
from .simharness import SimConfig, coverage_experiment, rate_experiment, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "SplineBasis", "make_basis", "penalty_matrix", "eval_basis", "eval_basis_deriv", "approximate_function",
    "CurveSample", "DataError", "FunctionalDataset", "NearSingularWarning", "UncenteredDataWarning",
    "assemble_system", "design_matrix", "inner_product", "load_dataset",
    "CheckLoss", "FitDiagnostics", "SolverConfig", "SolverSingularityError", "irls_fit", "subgradient_oracle",
    "FitConfig", "QuantileModel", "fit", "predict", "select_rho",
    "SimConfig", "coverage_experiment", "rate_experiment", "simulate_dataset",
]
