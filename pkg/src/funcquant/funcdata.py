"""Sampled curves, quadrature inner products and the penalized Gram system."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .bspline import SplineBasis, basis_values

QUADRATURE_RULES = ("trapezoid", "simpson")
SINGULAR_RTOL = 1e-10


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class UncenteredDataWarning(UserWarning):
    pass


class NearSingularWarning(RuntimeWarning):
    """The penalized Gram matrix has a (numerically) vanishing smallest eigenvalue."""


@dataclass(frozen=True)
class CurveSample:
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        _check_grid(grid)
        if values.shape != grid.shape:
            raise DataError(f"curve has {values.size} values for a grid of {grid.size} points")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)


def _check_grid(grid: np.ndarray, first_column: int = 1) -> None:
    if grid.ndim != 1 or grid.size < 2:
        raise DataError("grid must be a 1-D array with at least 2 points")
    if not np.all(np.isfinite(grid)) or grid[0] < 0.0 or grid[-1] > 1.0:
        raise DataError("grid must lie within [0, 1]")
    bad = np.flatnonzero(np.diff(grid) <= 0)
    if bad.size:
        raise DataError(f"grid is not strictly increasing at column {bad[0] + 1 + first_column}")


@dataclass(frozen=True)
class FunctionalDataset:
    """``n`` curves on one shared grid (rows of ``curves``) with scalar responses."""

    grid: np.ndarray
    curves: np.ndarray
    responses: np.ndarray
    ids: tuple = ()
    centered: bool = False
    mean_curve: Optional[np.ndarray] = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        curves = np.atleast_2d(np.asarray(self.curves, dtype=float))
        y = np.asarray(self.responses, dtype=float).ravel()
        _check_grid(grid)
        if curves.shape[1] != grid.size:
            raise DataError(f"curves have {curves.shape[1]} columns but the grid has {grid.size} points")
        if curves.shape[0] < 1:
            raise DataError("dataset needs at least one curve")
        if y.size != curves.shape[0]:
            raise DataError(f"{curves.shape[0]} curves but {y.size} responses")
        ids = tuple(self.ids) if len(self.ids) else tuple(str(i) for i in range(y.size))
        if len(ids) != y.size:
            raise DataError("one id per curve is required")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "curves", curves)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.curves.shape[0]

    @property
    def M(self) -> int:
        return self.grid.size

    def curve(self, i: int) -> CurveSample:
        return CurveSample(self.grid, self.curves[i])

    def subset(self, index) -> "FunctionalDataset":
        index = np.asarray(index)
        return replace(
            self,
            curves=self.curves[index],
            responses=self.responses[index],
            ids=tuple(np.asarray(self.ids, dtype=object)[index]),
        )


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _parse_float(cell: str, where: str) -> float:
    try:
        return float(cell.strip())
    except ValueError:
        raise DataError(f"non-numeric cell {cell!r} at {where}") from None


def read_curves_csv(path):
    """Read a curves file: header ``t, t_1..t_M`` then rows ``id, v_1..v_M``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty curves file")
    header = rows[0]
    if len(header) < 3:
        raise DataError(f"{path}: header needs a label column and at least 2 grid points")
    grid = np.array([_parse_float(c, f"row 1, column {j + 2}") for j, c in enumerate(header[1:])])
    try:
        _check_grid(grid, first_column=2)
    except DataError as exc:
        raise DataError(f"{path}: header row: {exc}") from None
    ids, values = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} columns, expected {len(header)}")
        ids.append(row[0].strip())
        values.append([_parse_float(c, f"row {r}, column {j + 2}") for j, c in enumerate(row[1:])])
    if not values:
        raise DataError(f"{path}: no curve rows")
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate curve ids")
    return grid, ids, np.array(values)


def read_responses_csv(path):
    ids, y = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    for r, row in enumerate(rows, start=1):
        if len(row) != 2:
            raise DataError(f"{path}: row {r} has {len(row)} columns, expected 2 (id, y)")
        try:
            val = float(row[1].strip())
        except ValueError:
            if r == 1:  # tolerate a header line
                continue
            raise DataError(f"{path}: non-numeric cell {row[1]!r} at row {r}, column 2") from None
        ids.append(row[0].strip())
        y.append(val)
    return ids, np.array(y)


def load_dataset(curves_source, responses_source) -> FunctionalDataset:
    """Read a curves CSV and a responses CSV into an uncentered dataset.

    Responses are matched to curves by id.
    """
    grid, ids, X = read_curves_csv(curves_source)
    rids, y = read_responses_csv(responses_source)
    if len(rids) != len(ids):
        raise DataError(f"dimension mismatch: {len(ids)} curves but {len(rids)} responses")
    lookup = {rid: val for rid, val in zip(rids, y)}
    if len(lookup) != len(rids):
        raise DataError(f"{responses_source}: duplicate response ids")
    missing = [i for i in ids if i not in lookup]
    if missing:
        raise DataError(f"no response for curve id {missing[0]!r}")
    return FunctionalDataset(grid, X, np.array([lookup[i] for i in ids]), tuple(ids))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_curves_csv(path, grid, curves, ids: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [_fmt(t) for t in grid])
        for cid, row in zip(ids, np.atleast_2d(curves)):
            w.writerow([cid] + [_fmt(v) for v in row])


def write_responses_csv(path, ids: Sequence[str], y) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for cid, val in zip(ids, y):
            w.writerow([cid, _fmt(val)])


def save_dataset(dataset: FunctionalDataset, curves_path, responses_path) -> None:
    write_curves_csv(curves_path, dataset.grid, dataset.curves, dataset.ids)
    write_responses_csv(responses_path, dataset.ids, dataset.responses)


# ---------------------------------------------------------------------------
# Centering and quadrature
# ---------------------------------------------------------------------------


def center_curves(dataset: FunctionalDataset) -> FunctionalDataset:
    if dataset.centered:
        raise ValueError("dataset is already centered")
    mean = dataset.curves.mean(axis=0)
    return replace(dataset, curves=dataset.curves - mean, centered=True, mean_curve=mean)


def quadrature_weights(grid, rule: str = "trapezoid") -> np.ndarray:
    """Weights ``w`` with ``sum(w * g)`` approximating the integral of ``g`` over the grid span."""
    grid = np.asarray(grid, dtype=float)
    h = np.diff(grid)
    if rule == "trapezoid":
        w = np.zeros(grid.size)
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
        return w
    if rule == "simpson":
        nint = grid.size - 1
        if nint % 2:
            raise DataError(f"simpson rule needs an even number of intervals, grid has {nint}")
        if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
            raise DataError("simpson rule needs a uniform grid")
        w = np.full(grid.size, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        return w * (grid[-1] - grid[0]) / (3.0 * nint)
    raise ValueError(f"unknown quadrature rule {rule!r}; choose from {QUADRATURE_RULES}")


def inner_product(curve: CurveSample, fvals, rule: str = "trapezoid", grid=None) -> float:
    """Quadrature approximation of the integral of ``curve * f`` on the curve's grid.

    If ``grid`` is given it must coincide with the curve's grid.
    """
    fvals = np.asarray(fvals, dtype=float)
    if grid is not None and not np.array_equal(np.asarray(grid, dtype=float), curve.grid):
        raise DataError("function grid does not match the curve grid")
    if fvals.shape != curve.grid.shape:
        raise DataError(f"function has {fvals.size} values for a grid of {curve.grid.size} points")
    w = quadrature_weights(curve.grid, rule)
    return float(np.sum(w * curve.values * fvals))


def sampled_basis(basis: SplineBasis, grid) -> np.ndarray:
    """Basis functions tabulated on ``grid`` for quadrature.

    Degree-0 splines jump at interior knots; a grid node sitting on a jump gets
    the mean of the two one-sided values, which keeps the composite rules
    second order there. Continuous bases are sampled as is.
    """
    grid = np.asarray(grid, dtype=float)
    B = basis_values(basis, grid)
    if basis.degree == 0:
        interior = basis.breakpoints[1:-1]
        for j, b in enumerate(interior, start=1):
            hit = np.isclose(grid, b, rtol=0.0, atol=1e-12)
            B[hit, j - 1] = B[hit, j] = 0.5
    return B


def design_matrix(dataset: FunctionalDataset, basis: SplineBasis, rule: str = "trapezoid") -> np.ndarray:
    """Pseudo-design matrix ``A[i, j] = <X_i, B_j>``; shape ``(n, dim)``."""
    if not dataset.centered:
        warnings.warn("building the design matrix from uncentered curves", UncenteredDataWarning, stacklevel=2)
    w = quadrature_weights(dataset.grid, rule)
    return dataset.curves @ (w[:, None] * sampled_basis(basis, dataset.grid))


@dataclass(frozen=True)
class PenalizedSystem:
    design: np.ndarray
    gram: np.ndarray
    penalty: np.ndarray
    rho: float
    assembled: np.ndarray
    lambda_min: float

    @property
    def n(self) -> int:
        return self.design.shape[0]

    @property
    def near_singular(self) -> bool:
        return self.lambda_min < singular_threshold(self.assembled)


def singular_threshold(mat) -> float:
    return SINGULAR_RTOL * (1.0 + abs(float(np.trace(mat))))


def assemble_system(A, G, rho: float, n: Optional[int] = None) -> PenalizedSystem:
    """Form ``C = A^T A / n`` and ``C_rho = C + rho G``, recording the smallest eigenvalue of ``C_rho``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    G = np.asarray(G, dtype=float)
    rho = float(rho)
    if not rho >= 0.0:
        raise ValueError(f"rho must be >= 0, got {rho}")
    n = A.shape[0] if n is None else int(n)
    if G.shape != (A.shape[1], A.shape[1]):
        raise ValueError(f"penalty shape {G.shape} does not match design with {A.shape[1]} columns")
    C = A.T @ A / n
    C = 0.5 * (C + C.T)
    C_rho = C + rho * G
    lam = float(np.linalg.eigvalsh(C_rho)[0])
    system = PenalizedSystem(A, C, G, rho, C_rho, lam)
    if system.near_singular:
        warnings.warn(
            f"penalized Gram matrix is near-singular (lambda_min={lam:.3g})", NearSingularWarning, stacklevel=2
        )
    return system
