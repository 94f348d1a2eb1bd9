"""Clamped B-spline bases on equispaced knots of [0, 1] and their roughness penalty."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import basis_matrix

APPROX_GRID_SIZE = 2048


@dataclass(frozen=True)
class SplineBasis:
    """Normalized B-splines of degree ``degree`` on ``intervals`` equal subintervals.

    Boundary knots 0 and 1 are repeated ``degree + 1`` times, so the space has
    dimension ``intervals + degree``.
    """

    degree: int
    intervals: int
    knots: np.ndarray = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.intervals + self.degree

    @property
    def breakpoints(self) -> np.ndarray:
        return self.knots[self.degree : self.degree + self.intervals + 1]


def make_basis(degree: int, intervals: int) -> SplineBasis:
    if int(degree) != degree or degree < 0:
        raise ValueError(f"degree must be a nonnegative integer, got {degree!r}")
    if int(intervals) != intervals or intervals < 1:
        raise ValueError(f"intervals must be a positive integer, got {intervals!r}")
    degree, intervals = int(degree), int(intervals)
    interior = np.arange(1, intervals) / intervals
    knots = np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])
    knots.setflags(write=False)
    return SplineBasis(degree, intervals, knots)


def _as_points(t) -> np.ndarray:
    pts = np.atleast_1d(np.asarray(t, dtype=float))
    if pts.ndim != 1:
        raise ValueError("evaluation points must be a scalar or 1-D array")
    if np.any(~np.isfinite(pts)) or np.any(pts < 0.0) or np.any(pts > 1.0):
        raise ValueError("evaluation points must lie in [0, 1]")
    return pts


def basis_values(basis: SplineBasis, t, order: int = 0) -> np.ndarray:
    """Tabulate ``B_l^(order)`` at every point of ``t``; shape ``(len(t), dim)``.

    Interior knots use the right limit, t = 1 the left limit.
    """
    if int(order) != order or order < 0 or order > basis.degree:
        raise ValueError(
            f"derivative order must be in [0, {basis.degree}] for degree {basis.degree}, got {order!r}"
        )
    pts = _as_points(t)
    return basis_matrix(np.asarray(basis.knots, dtype=float), basis.degree, pts, int(order))


def eval_basis(basis: SplineBasis, t: float) -> np.ndarray:
    """Vector of the ``dim`` basis functions at a single point ``t``."""
    return basis_values(basis, float(t))[0]


def eval_basis_deriv(basis: SplineBasis, t: float, order: int) -> np.ndarray:
    return basis_values(basis, float(t), order)[0]


def _check_theta(basis, theta):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (basis.dim,):
        raise ValueError(f"coefficient vector must have length {basis.dim}, got shape {theta.shape}")
    return theta


def eval_spline(basis: SplineBasis, theta, t):
    """Evaluate ``sum_l theta_l B_l(t)``; returns a float for scalar ``t``."""
    theta = _check_theta(basis, theta)
    vals = basis_values(basis, t) @ theta
    if np.ndim(t) == 0:
        return float(vals[0])
    return vals


def gauss_legendre_nodes(basis: SplineBasis, npts: int | None = None):
    """Per-span Gauss-Legendre nodes and weights covering [0, 1].

    ``npts`` defaults to ``degree + 1`` points per span, enough to integrate any
    product of two basis derivatives exactly.
    """
    npts = basis.degree + 1 if npts is None else int(npts)
    x, w = np.polynomial.legendre.leggauss(npts)
    bp = basis.breakpoints
    lo, hi = bp[:-1, None], bp[1:, None]
    nodes = 0.5 * (hi - lo) * x[None, :] + 0.5 * (hi + lo)
    weights = 0.5 * (hi - lo) * w[None, :]
    return nodes.ravel(), weights.ravel()


def penalty_matrix(basis: SplineBasis, m: int) -> np.ndarray:
    """Gram matrix of the ``m``-th derivatives, ``G[j, l] = <B_j^(m), B_l^(m)>``."""
    if int(m) != m or m < 1 or m > basis.degree:
        raise ValueError(f"penalty order m must satisfy 1 <= m <= degree={basis.degree}, got {m!r}")
    nodes, weights = gauss_legendre_nodes(basis)
    D = basis_values(basis, nodes, int(m))
    G = D.T @ (weights[:, None] * D)
    return 0.5 * (G + G.T)


def roughness(basis: SplineBasis, theta, m: int) -> float:
    """``integral of ((B^T theta)^(m))^2`` via the penalty matrix."""
    theta = _check_theta(basis, theta)
    return float(theta @ penalty_matrix(basis, m) @ theta)


def approximate_function(basis: SplineBasis, f, grid_size: int = APPROX_GRID_SIZE) -> np.ndarray:
    """Discrete least-squares projection of ``f`` onto the spline space.

    ``f`` is called once with the array of ``grid_size`` equispaced points.
    """
    grid = np.linspace(0.0, 1.0, grid_size)
    target = np.asarray(f(grid), dtype=float)
    if target.shape != grid.shape:
        target = np.broadcast_to(target, grid.shape).astype(float)
    B = basis_values(basis, grid)
    theta, *_ = np.linalg.lstsq(B, target, rcond=None)
    return theta


def sup_error(basis: SplineBasis, theta, f, grid_size: int = APPROX_GRID_SIZE) -> float:
    grid = np.linspace(0.0, 1.0, grid_size)
    target = np.broadcast_to(np.asarray(f(grid), dtype=float), grid.shape)
    return float(np.max(np.abs(eval_spline(basis, theta, grid) - target)))


def polynomial_coefficients(basis: SplineBasis, poly_coef) -> np.ndarray:
    """Spline coefficients of the polynomial ``sum_j poly_coef[j] t**j`` (degree <= basis degree).

    Found by interpolation at Greville abscissae, which is exact for members of the space.
    """
    poly_coef = np.asarray(poly_coef, dtype=float)
    if poly_coef.size - 1 > basis.degree:
        raise ValueError("polynomial degree exceeds the spline degree")
    q = basis.degree
    if q == 0:
        pts = 0.5 * (basis.knots[:-1] + basis.knots[1:])
    else:
        pts = np.array([basis.knots[j + 1 : j + q + 1].mean() for j in range(basis.dim)])
    B = basis_values(basis, pts)
    return np.linalg.solve(B, np.polynomial.polynomial.polyval(pts, poly_coef))
