"""Hot numeric kernels.

Each kernel exists twice: an explicit-loop version compiled with numba, and a
vectorized numpy version. ``basis_matrix`` and ``subgradient_descent`` dispatch
to one or the other depending on :data:`funcquant._accel.USE_NUMBA`.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# B-spline tabulation
# ---------------------------------------------------------------------------


@njit
def _find_span(knots, degree, dim, x):
    # right-continuous span; x at the right end belongs to the last span
    if x >= knots[dim]:
        return dim - 1
    lo = degree
    hi = dim
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if x < knots[mid]:
            hi = mid
        else:
            lo = mid
    return lo


@njit
def basis_matrix_loops(knots, degree, t, deriv):
    """Tabulate the ``deriv``-th derivative of every basis function at ``t``.

    Per-point de Boor triangle with the derivative scheme of Piegl & Tiller
    (The NURBS Book, A2.3). Returns an array of shape ``(len(t), dim)``.
    """
    p = degree
    dim = knots.shape[0] - p - 1
    npts = t.shape[0]
    out = np.zeros((npts, dim))
    ndu = np.empty((p + 1, p + 1))
    left = np.empty(p + 1)
    right = np.empty(p + 1)
    a = np.empty((2, p + 1))
    ders = np.empty((deriv + 1, p + 1))
    for ip in range(npts):
        x = t[ip]
        span = _find_span(knots, p, dim, x)
        ndu[0, 0] = 1.0
        for j in range(1, p + 1):
            left[j] = x - knots[span + 1 - j]
            right[j] = knots[span + j] - x
            saved = 0.0
            for r in range(j):
                ndu[j, r] = right[r + 1] + left[j - r]
                temp = ndu[r, j - 1] / ndu[j, r]
                ndu[r, j] = saved + right[r + 1] * temp
                saved = left[j - r] * temp
            ndu[j, j] = saved
        for j in range(p + 1):
            ders[0, j] = ndu[j, p]
        for r in range(p + 1):
            s1 = 0
            s2 = 1
            a[0, 0] = 1.0
            for k in range(1, deriv + 1):
                d = 0.0
                rk = r - k
                pk = p - k
                if r >= k:
                    a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                    d = a[s2, 0] * ndu[rk, pk]
                j1 = 1 if rk >= -1 else -rk
                j2 = k - 1 if r - 1 <= pk else p - r
                for j in range(j1, j2 + 1):
                    a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                    d += a[s2, j] * ndu[rk + j, pk]
                if r <= pk:
                    a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                    d += a[s2, k] * ndu[r, pk]
                ders[k, r] = d
                s1, s2 = s2, s1
        fac = 1.0
        for k in range(1, deriv + 1):
            fac *= p - k + 1
        for j in range(p + 1):
            out[ip, span - p + j] = ders[deriv, j] * fac
    return out


def _safe_ratio(num, den):
    res = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=res, where=den != 0)
    return res


def basis_matrix_numpy(knots, degree, t, deriv):
    """Vectorized Cox-de Boor recursion; same contract as :func:`basis_matrix_loops`."""
    knots = np.asarray(knots, dtype=float)
    t = np.asarray(t, dtype=float)
    p = degree
    nk = knots.size
    dim = nk - p - 1
    span = np.clip(np.searchsorted(knots, t, side="right") - 1, p, dim - 1)
    vals = np.zeros((t.size, nk - 1))
    vals[np.arange(t.size), span] = 1.0
    tt = t[:, None]
    low = p - deriv
    for d in range(1, low + 1):
        ncol = nk - 1 - d
        i = np.arange(ncol)
        w1 = _safe_ratio(tt - knots[i], knots[i + d] - knots[i])
        w2 = _safe_ratio(knots[i + d + 1] - tt, knots[i + d + 1] - knots[i + 1])
        vals = w1 * vals[:, :-1] + w2 * vals[:, 1:]
    for d in range(low + 1, p + 1):
        ncol = nk - 1 - d
        i = np.arange(ncol)
        c1 = _safe_ratio(d, knots[i + d] - knots[i])
        c2 = _safe_ratio(d, knots[i + d + 1] - knots[i + 1])
        vals = c1 * vals[:, :-1] - c2 * vals[:, 1:]
    return vals


# ---------------------------------------------------------------------------
# Subgradient descent on the exact penalized check-loss objective
# ---------------------------------------------------------------------------


@njit
def subgradient_loops(A, y, G, rho, alpha, iterations, step):
    n, d = A.shape
    theta = np.zeros(d)
    best = np.zeros(d)
    best_obj = np.inf
    r = np.empty(n)
    g = np.empty(d)
    Gt = np.empty(d)
    tilt = 2.0 * alpha - 1.0
    for it in range(iterations + 1):
        loss = 0.0
        for i in range(n):
            acc = y[i]
            for j in range(d):
                acc -= A[i, j] * theta[j]
            r[i] = acc
            loss += abs(acc) + tilt * acc
        pen = 0.0
        for j in range(d):
            acc = 0.0
            for l in range(d):
                acc += G[j, l] * theta[l]
            Gt[j] = acc
            pen += theta[j] * acc
        obj = loss / n + rho * pen
        if obj < best_obj:
            best_obj = obj
            for j in range(d):
                best[j] = theta[j]
        if it == iterations:
            break
        for j in range(d):
            g[j] = 2.0 * rho * Gt[j]
        for i in range(n):
            if r[i] > 0.0:
                s = 2.0 * alpha
            elif r[i] < 0.0:
                s = 2.0 * alpha - 2.0
            else:
                s = tilt
            s /= n
            for j in range(d):
                g[j] -= s * A[i, j]
        h = step / np.sqrt(it + 1.0)
        for j in range(d):
            theta[j] -= h * g[j]
    return best, best_obj


def subgradient_numpy(A, y, G, rho, alpha, iterations, step):
    n, d = A.shape
    theta = np.zeros(d)
    best = theta.copy()
    best_obj = np.inf
    tilt = 2.0 * alpha - 1.0
    for it in range(iterations + 1):
        r = y - A @ theta
        Gt = G @ theta
        obj = np.mean(np.abs(r) + tilt * r) + rho * (theta @ Gt)
        if obj < best_obj:
            best_obj = obj
            best = theta.copy()
        if it == iterations:
            break
        s = np.where(r > 0, 2.0 * alpha, np.where(r < 0, 2.0 * alpha - 2.0, tilt))
        g = 2.0 * rho * Gt - A.T @ s / n
        theta = theta - step / np.sqrt(it + 1.0) * g
    return best, best_obj


if USE_NUMBA:
    basis_matrix = basis_matrix_loops
    subgradient_descent = subgradient_loops
else:
    basis_matrix = basis_matrix_numpy
    subgradient_descent = subgradient_numpy
