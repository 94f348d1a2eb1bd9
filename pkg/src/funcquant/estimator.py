"""Fit/predict API for the functional linear quantile model ``g(X) = <psi, X>``."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .bspline import SplineBasis, eval_spline, make_basis, penalty_matrix
from .funcdata import (
    QUADRATURE_RULES,
    CurveSample,
    DataError,
    FunctionalDataset,
    UncenteredDataWarning,
    assemble_system,
    center_curves,
    design_matrix,
    quadrature_weights,
    sampled_basis,
)
from .solver import CheckLoss, FitDiagnostics, SolverConfig, check_loss, irls_fit

MODEL_FORMAT = "funcquant-model/1"


@dataclass(frozen=True)
class FitConfig:
    """Estimator settings.

    With ``auto_k_rho`` the number of intervals and the penalty weight follow the
    sample size: ``k = round(n^(1/(4p+1)))`` and ``rho = n^(-2p/(4p+1))``, where
    ``smoothness`` is ``p``.
    """

    alpha: float = 0.5
    degree: int = 3
    intervals: int = 8
    penalty_order: int = 2
    rho: float = 1e-2
    quadrature: str = "trapezoid"
    solver: SolverConfig = field(default_factory=SolverConfig)
    auto_k_rho: bool = False
    smoothness: float = 2
    intercept: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.degree < 0 or self.intervals < 1:
            raise ValueError("degree must be >= 0 and intervals >= 1")
        if not 1 <= self.penalty_order <= self.degree:
            raise ValueError(
                f"penalty order must satisfy 1 <= m <= degree, got m={self.penalty_order}, degree={self.degree}"
            )
        if not self.rho >= 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")
        if self.quadrature not in QUADRATURE_RULES:
            raise ValueError(f"quadrature must be one of {QUADRATURE_RULES}")
        if self.auto_k_rho and not self.penalty_order <= self.smoothness <= self.degree:
            raise ValueError(
                f"automatic k/rho needs m <= p <= degree, got m={self.penalty_order}, "
                f"p={self.smoothness}, degree={self.degree}"
            )

    def resolved(self, n: int) -> tuple[int, float]:
        """(intervals, rho) actually used for a sample of size ``n``."""
        if not self.auto_k_rho:
            return self.intervals, self.rho
        p = self.smoothness
        return auto_intervals(n, p), auto_rho(n, p)


def auto_intervals(n: int, p: float) -> int:
    return max(1, int(round(n ** (1.0 / (4 * p + 1)))))


def auto_rho(n: int, p: float) -> float:
    return float(n ** (-2.0 * p / (4 * p + 1)))


@dataclass
class QuantileModel:
    basis: SplineBasis
    theta_hat: np.ndarray
    alpha: float
    rho: float
    penalty_order: int
    grid: np.ndarray
    quadrature: str
    mean_curve: Optional[np.ndarray]
    diagnostics: FitDiagnostics
    intercept: float = 0.0
    fitted: Optional[np.ndarray] = None
    _wbasis: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def weighted_basis(self) -> np.ndarray:
        if self._wbasis is None:
            w = quadrature_weights(self.grid, self.quadrature)
            self._wbasis = w[:, None] * sampled_basis(self.basis, self.grid)
        return self._wbasis

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        diag = self.diagnostics.to_dict()
        if self.fitted is not None:
            diag["fitted"] = [float(v) for v in self.fitted]
        return {
            "format": MODEL_FORMAT,
            "degree": self.basis.degree,
            "intervals": self.basis.intervals,
            "penalty_order": self.penalty_order,
            "alpha": float(self.alpha),
            "rho": float(self.rho),
            "knots": [float(v) for v in self.basis.knots],
            "theta_hat": [float(v) for v in self.theta_hat],
            "intercept": float(self.intercept),
            "mean_curve": None if self.mean_curve is None else [float(v) for v in self.mean_curve],
            "grid": [float(v) for v in self.grid],
            "quadrature": self.quadrature,
            "diagnostics": diag,
        }

    def to_json(self) -> str:
        # float repr is the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileModel":
        try:
            basis = make_basis(int(d["degree"]), int(d["intervals"]))
            if not np.array_equal(basis.knots, np.asarray(d["knots"], dtype=float)):
                raise DataError("stored knots do not match an equispaced clamped basis")
            theta = np.asarray(d["theta_hat"], dtype=float)
            if theta.shape != (basis.dim,):
                raise DataError(f"theta_hat has {theta.size} entries, basis has {basis.dim}")
            diag_d = dict(d.get("diagnostics", {}))
            fitted = diag_d.pop("fitted", None)
            mean = d.get("mean_curve")
            return cls(
                basis=basis,
                theta_hat=theta,
                alpha=float(d["alpha"]),
                rho=float(d["rho"]),
                penalty_order=int(d["penalty_order"]),
                grid=np.asarray(d["grid"], dtype=float),
                quadrature=str(d["quadrature"]),
                mean_curve=None if mean is None else np.asarray(mean, dtype=float),
                diagnostics=FitDiagnostics.from_dict(diag_d),
                intercept=float(d.get("intercept", 0.0)),
                fitted=None if fitted is None else np.asarray(fitted, dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"malformed model document: {exc!r}") from None

    @classmethod
    def from_json(cls, text: str) -> "QuantileModel":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"model file is not valid JSON: {exc}") from None
        return cls.from_dict(d)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "QuantileModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def fit(dataset: FunctionalDataset, config: FitConfig, center: bool = True) -> QuantileModel:
    """Estimate the spline coefficient function for the ``config.alpha`` quantile.

    Curves are centered by their sample mean unless ``center`` is False (or the
    dataset is already centered); the mean is kept for prediction.
    """
    ds = dataset
    if center and not ds.centered:
        ds = center_curves(ds)
    k, rho = config.resolved(ds.n)
    basis = make_basis(config.degree, k)
    with warnings.catch_warnings():
        if not center:
            warnings.simplefilter("ignore", UncenteredDataWarning)
        A = design_matrix(ds, basis, config.quadrature)
    G = penalty_matrix(basis, config.penalty_order)
    if config.intercept:
        A = np.hstack([np.ones((ds.n, 1)), A])
        G = np.pad(G, ((1, 0), (1, 0)))
    system = assemble_system(A, G, rho, ds.n)
    coef, diag = irls_fit(system, ds.responses, CheckLoss(config.alpha), config.solver)
    intercept = float(coef[0]) if config.intercept else 0.0
    theta = coef[1:] if config.intercept else coef
    return QuantileModel(
        basis=basis,
        theta_hat=theta,
        alpha=config.alpha,
        rho=rho,
        penalty_order=config.penalty_order,
        grid=ds.grid.copy(),
        quadrature=config.quadrature,
        mean_curve=None if ds.mean_curve is None else ds.mean_curve.copy(),
        diagnostics=diag,
        intercept=intercept,
        fitted=A @ coef,
    )


def _check_grid(model: QuantileModel, grid) -> None:
    grid = np.asarray(grid, dtype=float)
    if grid.shape != model.grid.shape or not np.array_equal(grid, model.grid):
        raise DataError("curve grid does not match the training grid")


def predict_values(model: QuantileModel, grid, curves) -> np.ndarray:
    """Predicted conditional quantiles for the rows of ``curves`` sampled on ``grid``."""
    _check_grid(model, grid)
    X = np.atleast_2d(np.asarray(curves, dtype=float))
    if model.mean_curve is not None:
        X = X - model.mean_curve
    return X @ model.weighted_basis() @ model.theta_hat + model.intercept


def predict(model: QuantileModel, curve: CurveSample) -> float:
    """``<psi_hat, curve - training mean>`` by the model's quadrature rule."""
    return float(predict_values(model, curve.grid, curve.values)[0])


def predict_dataset(model: QuantileModel, dataset: FunctionalDataset) -> np.ndarray:
    if dataset.centered:
        raise DataError("pass raw curves; the model applies its own training mean")
    return predict_values(model, dataset.grid, dataset.curves)


def coefficient_function(model: QuantileModel, out_grid) -> np.ndarray:
    return eval_spline(model.basis, model.theta_hat, np.asarray(out_grid, dtype=float))


def penalty_value(model: QuantileModel) -> float:
    """``theta' G theta`` for the model's penalty order."""
    G = penalty_matrix(model.basis, model.penalty_order)
    return float(model.theta_hat @ G @ model.theta_hat)


def empirical_seminorm(dataset: FunctionalDataset, fvals, rule: str = "trapezoid") -> float:
    """Empirical squared semi-norm ``(1/n) sum_i <u, X_i>^2`` for ``u`` sampled on the grid."""
    fvals = np.asarray(fvals, dtype=float)
    if fvals.shape != dataset.grid.shape:
        raise DataError(f"function has {fvals.size} values for a grid of {dataset.M} points")
    scores = dataset.curves @ (quadrature_weights(dataset.grid, rule) * fvals)
    return float(np.mean(scores**2))


def fold_assignment(n: int, folds: int, seed: int = 0) -> np.ndarray:
    if not 2 <= folds <= n:
        raise ValueError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=int)
    labels[perm] = np.arange(n) % folds
    return labels


def cv_scores(dataset: FunctionalDataset, config: FitConfig, rho_grid, folds: int = 5, seed: int = 0) -> np.ndarray:
    """Held-out mean check loss for every rho in ``rho_grid`` (averaged over folds)."""
    if dataset.centered:
        raise DataError("cross-validation needs raw (uncentered) curves")
    rho_grid = [float(r) for r in rho_grid]
    if not rho_grid:
        raise ValueError("rho_grid is empty")
    labels = fold_assignment(dataset.n, folds, seed)
    loss = CheckLoss(config.alpha)
    scores = np.zeros(len(rho_grid))
    for f in range(folds):
        train = dataset.subset(np.flatnonzero(labels != f))
        test = dataset.subset(np.flatnonzero(labels == f))
        for j, rho in enumerate(rho_grid):
            cfg = replace(config, rho=rho, auto_k_rho=False, intervals=config.resolved(train.n)[0])
            model = fit(train, cfg)
            pred = predict_values(model, test.grid, test.curves)
            scores[j] += np.mean(check_loss(loss, test.responses - pred)) / folds
    return scores


def select_rho(dataset: FunctionalDataset, config: FitConfig, rho_grid, folds: int = 5, seed: int = 0) -> float:
    """K-fold cross-validated penalty weight; ties go to the larger rho."""
    rho_grid = [float(r) for r in rho_grid]
    if not rho_grid:
        raise ValueError("rho_grid is empty")
    fold_assignment(dataset.n, folds, seed)
    if len(rho_grid) == 1:
        return rho_grid[0]
    scores = cv_scores(dataset, config, rho_grid, folds, seed)
    best_rho, best = None, math.inf
    for j in sorted(range(len(rho_grid)), key=lambda j: -rho_grid[j]):
        if scores[j] < best - 1e-12 * abs(best if math.isfinite(best) else 0.0):
            best_rho, best = rho_grid[j], scores[j]
    return best_rho
