"""Penalized check-loss minimization over spline coefficients.

The criterion is

    F(theta) = (1/n) sum_i l_alpha(y_i - (A theta)_i) + rho * theta' G theta,
    l_alpha(u) = |u| + (2 alpha - 1) u.

:func:`irls_fit` minimizes it by iteratively reweighted least squares on a
smoothed surrogate; :func:`subgradient_oracle` is a slow, independent check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np
import scipy.linalg
import scipy.optimize

from ._kernels import subgradient_descent
from .funcdata import PenalizedSystem

DEFAULT_ORACLE_ITERATIONS = 200_000
KKT_TOL = 1e-7


class SolverSingularityError(np.linalg.LinAlgError):
    """The weighted normal equations are singular (only possible without penalty)."""


@dataclass(frozen=True)
class CheckLoss:
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in the open interval (0, 1), got {self.alpha}")

    def __call__(self, u):
        return check_loss(self, u)


@dataclass(frozen=True)
class SolverConfig:
    """IRLS schedule. Smoothing levels are multiplied by the MAD of the responses."""

    epsilon_init: float = 1.0
    epsilon_final: float = 1e-8
    epsilon_decay: float = 0.1
    max_outer: int = 30
    max_inner: int = 100
    tol: float = 1e-10

    def __post_init__(self):
        if not (self.epsilon_init > 0 and self.epsilon_final > 0):
            raise ValueError("smoothing levels must be positive")
        if self.epsilon_final > self.epsilon_init:
            raise ValueError("epsilon_final must not exceed epsilon_init")
        if not 0.0 < self.epsilon_decay < 1.0:
            raise ValueError("epsilon_decay must lie in (0, 1)")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration limits must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class FitDiagnostics:
    objective_trace: List[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    final_epsilon: float = float("nan")
    lambda_min: float = float("nan")
    near_singular: bool = False
    kkt_residual: float = float("nan")
    polished: bool = False
    # smoothed objective after every inner step, one list per smoothing stage
    stage_traces: List[List[float]] = field(default_factory=list, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "objective_trace": [float(v) for v in self.objective_trace],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "final_epsilon": float(self.final_epsilon),
            "lambda_min": float(self.lambda_min),
            "near_singular": bool(self.near_singular),
            "kkt_residual": float(self.kkt_residual),
            "polished": bool(self.polished),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitDiagnostics":
        keys = (
            "objective_trace",
            "converged",
            "iterations",
            "final_epsilon",
            "lambda_min",
            "near_singular",
            "kkt_residual",
            "polished",
        )
        return cls(**{k: d[k] for k in keys if k in d})


def check_loss(loss: CheckLoss, u):
    u = np.asarray(u, dtype=float)
    out = np.abs(u) + (2.0 * loss.alpha - 1.0) * u
    return float(out) if out.ndim == 0 else out


def _unpack(A, y, G):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if y.size != A.shape[0]:
        raise ValueError(f"design has {A.shape[0]} rows but y has {y.size} entries")
    if G.shape != (A.shape[1], A.shape[1]):
        raise ValueError(f"penalty shape {G.shape} does not match {A.shape[1]} coefficients")
    return A, y, G


def objective(theta, A, y, rho, G, loss: CheckLoss) -> float:
    A, y, G = _unpack(A, y, G)
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size != A.shape[1]:
        raise ValueError(f"theta has {theta.size} entries, design has {A.shape[1]} columns")
    r = y - A @ theta
    return float(np.mean(check_loss(loss, r)) + rho * (theta @ G @ theta))


def smoothed_objective(theta, A, y, rho, G, loss: CheckLoss, eps: float) -> float:
    """Surrogate with ``|u|`` replaced by ``sqrt(u^2 + eps^2)``."""
    r = y - A @ theta
    tilt = 2.0 * loss.alpha - 1.0
    return float(np.mean(np.sqrt(r * r + eps * eps) + tilt * r) + rho * (theta @ G @ theta))


def response_scale(y) -> float:
    y = np.asarray(y, dtype=float)
    mad = float(np.median(np.abs(y - np.median(y))))
    return mad if mad > 0 else 1.0


def _solve_spd(M, b, rho):
    try:
        return scipy.linalg.cho_solve(scipy.linalg.cho_factor(M, lower=True), b)
    except np.linalg.LinAlgError:
        if rho == 0:
            raise SolverSingularityError("weighted normal equations are singular; use rho > 0") from None
    # penalty and design share a null direction: the criterion is flat along it
    return scipy.linalg.lstsq(M, b)[0]


def _slopes(r, alpha):
    return np.where(r > 0, 2.0 * alpha, 2.0 * alpha - 2.0)


def _whitener(A, G, rho):
    """``(W, W^+)`` with ``W = C_rho^{-1/2}`` restricted to the numerically nonflat subspace.

    Eigen-directions below 1e-12 of the largest eigenvalue are flat for both the
    loss and the penalty (up to rounding); both factors vanish on them, so
    ``W @ W^+`` is the projector onto the remaining directions.
    """
    C = A.T @ A / A.shape[0] + rho * G
    evals, evecs = np.linalg.eigh(0.5 * (C + C.T))
    keep = evals > 1e-12 * max(float(evals[-1]), np.finfo(float).tiny)
    V, lam = evecs[:, keep], evals[keep]
    return (V * lam**-0.5) @ V.T, (V * lam**0.5) @ V.T


def _polish(A, y, G, rho, loss, theta, max_iter=None):
    """Active-set descent on the exact criterion, started from the IRLS solution.

    With the residual signs fixed outside a zero set S, the criterion is a
    quadratic subject to ``A_S theta = y_S``. Each step solves that problem (plus
    a tiny proximal term, so it stays well posed without penalty), moves toward
    the solution until the first residual changes sign (that residual joins S),
    and frees members of S whose implied slope leaves ``[2 alpha - 2, 2 alpha]``.
    Works in whitened coordinates; stops at the first step that fails to descend.
    Returns ``(theta, improved)``.
    """
    n, d = A.shape
    lo, hi = 2.0 * loss.alpha - 2.0, 2.0 * loss.alpha
    max_iter = 4 * (n + d) if max_iter is None else max_iter
    W, W_inv = _whitener(A, G, rho)
    Aw, Gw = A @ W, W.T @ G @ W
    mu = 1e-10
    Q = 2.0 * rho * Gw + mu * np.eye(d)
    phi = W_inv @ theta
    # component along flat directions is left where IRLS put it
    theta_flat = theta - W @ phi
    f0 = f_cur = objective(phi, Aw, y, rho, Gw, loss)
    best = phi
    r = y - Aw @ phi
    sign = np.where(r >= 0, 1.0, -1.0)
    in_S = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        S, N = np.flatnonzero(in_S), np.flatnonzero(~in_S)
        g = Aw[N].T @ np.where(sign[N] > 0, hi, lo) / n
        K = np.zeros((d + S.size, d + S.size))
        K[:d, :d] = Q
        K[:d, d:] = Aw[S].T
        K[d:, :d] = Aw[S]
        sol = scipy.linalg.lstsq(K, np.concatenate([g + mu * phi, y[S]]))[0]
        step = sol[:d] - phi
        # first sign change among the free residuals along the step
        drift = -sign[N] * (Aw[N] @ step)
        t = np.full(N.size, np.inf)
        toward = drift < 0
        t[toward] = np.abs(r[N][toward]) / -drift[toward]
        hit = N.size > 0 and t.min() < 1.0
        cand = phi + max(float(t.min()), 0.0) * step if hit else sol[:d]
        f_new = objective(cand, Aw, y, rho, Gw, loss)
        if f_new > f_cur + 1e-14 * (1.0 + abs(f_cur)):
            break
        phi, f_cur = cand, f_new
        if f_cur <= objective(best, Aw, y, rho, Gw, loss):
            best = phi
        r = y - Aw @ phi
        if hit:
            in_S[N[int(np.argmin(t))]] = True
            continue
        slope = -n * sol[d:]
        viol = np.maximum(slope - hi, lo - slope)
        if S.size and viol.max() > 1e-9:
            k = int(np.argmax(viol))
            in_S[S[k]] = False
            sign[S[k]] = 1.0 if slope[k] > hi else -1.0
            continue
        if np.linalg.norm(step) <= 1e-12 * (1.0 + np.linalg.norm(phi)):
            break
    theta_new = theta_flat + W @ best
    improved = objective(theta_new, A, y, rho, G, loss) < objective(theta, A, y, rho, G, loss)
    return (theta_new, True) if improved else (theta, False)


def kkt_residual(theta, A, y, rho, G, loss: CheckLoss, zero_tol: float | None = None) -> float:
    """Relative distance of zero from the subdifferential of the exact criterion at ``theta``.

    Residuals with ``|r_i| <= zero_tol`` may take any slope in ``[2 alpha - 2, 2 alpha]``;
    the best such choice is found by bounded least squares.
    """
    A, y, G = _unpack(A, y, G)
    n, d = A.shape
    r = y - A @ theta
    if zero_tol is None:
        zero_tol = 1e-9 * (1.0 + float(np.max(np.abs(y))))
    S = np.abs(r) <= zero_tol
    grad = 2.0 * rho * (G @ theta) - A[~S].T @ _slopes(r[~S], loss.alpha) / n
    scale = 1.0 + float(np.linalg.norm(np.abs(A).sum(axis=0))) / n
    if not S.any():
        return float(np.linalg.norm(grad)) / scale
    lo, hi = 2.0 * loss.alpha - 2.0, 2.0 * loss.alpha
    res = scipy.optimize.lsq_linear(A[S].T / n, grad, bounds=(lo, hi), method="bvls")
    return float(np.linalg.norm(A[S].T @ res.x / n - grad)) / scale


def irls_fit(system: PenalizedSystem, y, loss: CheckLoss, config: SolverConfig | None = None):
    """Minimize the penalized check-loss criterion of ``system`` for responses ``y``.

    Returns ``(theta_hat, FitDiagnostics)``.

    With ``w_i = 1 / sqrt(r_i^2 + eps^2)`` the smoothed criterion is majorized at the
    current iterate by ``(1/n) sum_i [w_i r_i^2 / 2 + (2 alpha - 1) r_i] + rho theta' G theta``
    (plus a constant). Setting its gradient to zero gives the inner solve

        ((1/n) A' W A + 2 rho G) theta = (1/n) A' W y + ((2 alpha - 1) / n) A' 1,

    so each step cannot increase the smoothed criterion. ``eps`` shrinks
    geometrically; the exact criterion differs from the smoothed one by at most ``eps``.
    The result is then polished on its residual sign pattern and checked against
    the subgradient optimality condition (``diagnostics.kkt_residual``).
    """
    config = SolverConfig() if config is None else config
    A, y, G = _unpack(system.design, y, system.penalty)
    rho = system.rho
    n, d = A.shape
    tilt = 2.0 * loss.alpha - 1.0
    scale = response_scale(y)
    eps = config.epsilon_init * scale
    eps_final = config.epsilon_final * scale
    shift = tilt * A.sum(axis=0) / n
    pen = 2.0 * rho * G

    diag = FitDiagnostics(lambda_min=system.lambda_min, near_singular=system.near_singular)
    theta = np.zeros(d)
    for stage in range(config.max_outer):
        f_old = smoothed_objective(theta, A, y, rho, G, loss, eps)
        trace = [f_old]
        stage_done = False
        for _ in range(config.max_inner):
            r = y - A @ theta
            w = 1.0 / np.sqrt(r * r + eps * eps)
            M = (A.T * w) @ A / n + pen
            b = A.T @ (w * y) / n + shift
            theta = _solve_spd(0.5 * (M + M.T), b, rho)
            f_new = smoothed_objective(theta, A, y, rho, G, loss, eps)
            trace.append(f_new)
            diag.iterations += 1
            change = abs(f_old - f_new) / max(abs(f_old), np.finfo(float).tiny)
            f_old = f_new
            if change < config.tol:
                stage_done = True
                break
        diag.stage_traces.append(trace)
        diag.objective_trace.append(objective(theta, A, y, rho, G, loss))
        diag.final_epsilon = eps / scale
        if eps <= eps_final * (1.0 + 1e-12):
            diag.converged = stage_done
            break
        eps = max(eps * config.epsilon_decay, eps_final)
    theta, diag.polished = _polish(A, y, G, rho, loss, theta)
    if diag.polished:
        diag.objective_trace.append(objective(theta, A, y, rho, G, loss))
    diag.kkt_residual = kkt_residual(theta, A, y, rho, G, loss)
    diag.converged = diag.converged or diag.kkt_residual < KKT_TOL
    return theta, diag


def subgradient_oracle(system: PenalizedSystem, y, loss: CheckLoss, iterations: int = DEFAULT_ORACLE_ITERATIONS):
    """Best iterate of plain subgradient descent on the exact (nonsmooth) criterion.

    Runs in whitened coordinates ``theta = P phi`` with ``P = C_rho^{-1/2}`` (directions
    with eigenvalue below 1e-12 of the largest are left out), starting from zero with step ``c / sqrt(t)``,
    ``c = 1 / (1 + max_i ||(A P)_i|| + 2 rho ||P' G P||)``. Nothing is shared with
    :func:`irls_fit`; intended for tests.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    A, y, G = _unpack(system.design, y, system.penalty)
    rho = float(system.rho)
    P, _ = _whitener(A, G, rho)
    AP = np.ascontiguousarray(A @ P)
    GP = np.ascontiguousarray(P.T @ G @ P)
    step = 1.0 / (1.0 + float(np.max(np.linalg.norm(AP, axis=1))) + 2.0 * rho * float(np.linalg.norm(GP, 2)))
    phi, _ = subgradient_descent(AP, y, GP, rho, float(loss.alpha), int(iterations), step)
    return P @ phi
