"""Synthetic functional data with known truth, and Monte Carlo checks of the estimator.

Two experiments are provided: :func:`rate_experiment` (error decay with the
sample size under the automatic k/rho rule) and :func:`coverage_experiment`
(out-of-sample frequency of ``y <= predicted quantile``).
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .estimator import FitConfig, empirical_seminorm, fit, predict_values, coefficient_function
from .funcdata import FunctionalDataset, center_curves, quadrature_weights

log = logging.getLogger(__name__)

COVARIATES = ("brownian", "karhunen_loeve")
NOISES = ("gaussian", "student_t", "exponential")


def _psi_sin(t):
    return np.sin(2 * np.pi * t)


def _psi_bump(t):
    return t * (1 - t)


def _psi_cubic(t):
    return 4.0 * (t - 0.5) ** 3 + 2.0 * t - 1.0


PSI_LIBRARY: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "sin": _psi_sin,
    "quadratic": _psi_bump,
    "cubic": _psi_cubic,
}


@dataclass(frozen=True)
class SimConfig:
    """Recipe for one synthetic dataset; ``seed`` determines it completely.

    Noise is ``sigma * (D - Q_D(alpha))`` for a standard draw ``D`` (normal,
    Student t with ``df`` degrees of freedom, or unit exponential), so its
    ``alpha``-quantile is exactly zero.
    """

    n: int = 200
    M: int = 101
    covariate: str = "brownian"
    kl_terms: int = 20
    psi: str = "sin"
    noise: str = "gaussian"
    sigma: float = 1.0
    df: float = 5.0
    alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.M < 2:
            raise ValueError("need n >= 1 curves and M >= 2 grid points")
        if self.covariate not in COVARIATES:
            raise ValueError(f"covariate must be one of {COVARIATES}")
        if self.kl_terms < 1:
            raise ValueError("kl_terms must be >= 1")
        if self.psi not in PSI_LIBRARY:
            raise ValueError(f"psi must be one of {tuple(PSI_LIBRARY)}")
        if self.noise not in NOISES:
            raise ValueError(f"noise must be one of {NOISES}")
        if self.sigma < 0 or self.df <= 0:
            raise ValueError("sigma must be >= 0 and df > 0")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.M)


def _noise_law(config: SimConfig):
    if config.noise == "gaussian":
        return stats.norm()
    if config.noise == "student_t":
        return stats.t(config.df)
    return stats.expon()


def noise_shift(config: SimConfig) -> float:
    """Constant added to ``sigma * D`` so that the noise has alpha-quantile zero."""
    if config.sigma == 0:
        return 0.0
    return -config.sigma * float(_noise_law(config).ppf(config.alpha))


def draw_noise(config: SimConfig, size: int, rng: np.random.Generator) -> np.ndarray:
    if config.noise == "gaussian":
        raw = rng.standard_normal(size)
    elif config.noise == "student_t":
        raw = rng.standard_t(config.df, size)
    else:
        raw = rng.standard_exponential(size)
    return config.sigma * raw + noise_shift(config)


def kl_eigenpairs(J: int, grid):
    """Leading Karhunen-Loeve terms of Brownian motion on [0, 1]."""
    freq = (np.arange(1, J + 1) - 0.5) * np.pi
    lam = 1.0 / freq**2
    phi = np.sqrt(2.0) * np.sin(np.outer(np.asarray(grid, dtype=float), freq))
    return lam, phi


def brownian_paths(n: int, grid, rng: np.random.Generator) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    steps = np.diff(np.concatenate([[0.0], grid]))
    return np.cumsum(rng.standard_normal((n, grid.size)) * np.sqrt(steps), axis=1)


def kl_paths(n: int, grid, J: int, rng: np.random.Generator) -> np.ndarray:
    # uniform scores: unit variance and bounded sample paths
    lam, phi = kl_eigenpairs(J, grid)
    xi = rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), (n, J))
    return (xi * np.sqrt(lam)) @ phi.T


def simulate_dataset(config: SimConfig):
    """Returns ``(dataset, psi_true)`` with uncentered curves and ``psi_true`` on the grid."""
    rng = np.random.default_rng(config.seed)
    grid = config.grid
    if config.covariate == "brownian":
        X = brownian_paths(config.n, grid, rng)
    else:
        X = kl_paths(config.n, grid, config.kl_terms, rng)
    psi = PSI_LIBRARY[config.psi](grid)
    signal = X @ (quadrature_weights(grid) * psi)
    y = signal + draw_noise(config, config.n, rng)
    return FunctionalDataset(grid, X, y), psi


def covariance_kernel(covariate: str, grid, kl_terms: int = 20) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if covariate == "brownian":
        return np.minimum.outer(grid, grid)
    if covariate == "karhunen_loeve":
        lam, phi = kl_eigenpairs(kl_terms, grid)
        return (phi * lam) @ phi.T
    raise ValueError(f"unsupported covariate law {covariate!r}")


def theoretical_seminorm_error(psi_hat, psi_true, grid, covariate: str = "brownian", kl_terms: int = 20) -> float:
    """``<Gamma_X u, u>`` for ``u = psi_hat - psi_true`` under the covariate law.

    Both laws have mean zero, so centering by the sample mean leaves the
    population covariance unchanged.
    """
    grid = np.asarray(grid, dtype=float)
    u = np.asarray(psi_hat, dtype=float) - np.asarray(psi_true, dtype=float)
    if covariate == "brownian":
        return brownian_quadratic_form(u, grid)
    K = covariance_kernel(covariate, grid, kl_terms)
    try:
        w = quadrature_weights(grid, "simpson")
    except ValueError:
        w = quadrature_weights(grid, "trapezoid")
    wu = w * u
    return max(float(wu @ K @ wu), 0.0)


def brownian_quadratic_form(u, grid) -> float:
    """``double integral of min(s, t) u(s) u(t)`` for the piecewise-linear interpolant of ``u``.

    Uses ``int_0^1 U(s)^2 ds`` with ``U(s) = int_s^1 u``; ``U`` is piecewise
    quadratic, so 3-point Gauss-Legendre per interval is exact. ``u`` is taken
    as zero left of ``grid[0]``.
    """
    u = np.asarray(u, dtype=float)
    h = np.diff(grid)
    # U at the grid points, integrating the interpolant from the right end
    seg = 0.5 * h * (u[:-1] + u[1:])
    U = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    x, w = np.polynomial.legendre.leggauss(3)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    ul, ur = u[:-1, None], u[1:, None]
    Ux = U[1:, None] + h[:, None] * (ul * (1.0 - x) + (ur - ul) * (1.0 - x**2) / 2.0)
    total = float(np.sum(h[:, None] * w * Ux**2)) + grid[0] * U[0] ** 2
    return total


# ---------------------------------------------------------------------------
# Rate experiment
# ---------------------------------------------------------------------------


def replication_seed(base_seed: int, n: int, rep: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), int(n), int(rep)]).generate_state(1, dtype=np.uint32)[0])


def holdout_seed(base_seed: int) -> int:
    """Seed for the fresh evaluation sample of a coverage run."""
    return int(np.random.SeedSequence([int(base_seed), 0x7E57]).generate_state(1, dtype=np.uint32)[0])


@dataclass
class RateRow:
    n: int
    reps_used: int
    nonconverged: int
    mean_err_n: float
    se_n: float
    mean_err_2: float
    se_2: float
    intervals: int
    rho: float


@dataclass
class RateReport:
    rows: List[RateRow]
    slope: float
    slope_se: float
    smoothness: float
    settings: dict = field(default_factory=dict)

    CSV_COLUMNS = ("n", "reps_used", "mean_err_n", "se_n", "mean_err_2", "se_2")

    @property
    def theoretical_slope(self) -> float:
        p = self.smoothness
        return -2.0 * p / (4.0 * p + 1.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.n, r.reps_used] + [repr(float(getattr(r, c))) for c in self.CSV_COLUMNS[2:]])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "slope": self.slope,
            "slope_se": self.slope_se,
            "theoretical_slope": self.theoretical_slope,
            "smoothness": self.smoothness,
            "rows": [asdict(r) for r in self.rows],
            "settings": self.settings,
        }


def _loglog_slope(ns, errs):
    x, y = np.log(np.asarray(ns, float)), np.log(np.asarray(errs, float))
    res = stats.linregress(x, y)
    return float(res.slope), float(res.stderr)


def _one_replication(args):
    sim, fit_cfg = args
    ds, psi = simulate_dataset(sim)
    model = fit(ds, fit_cfg)
    psi_hat = coefficient_function(model, ds.grid)
    err_n = empirical_seminorm(center_curves(ds), psi_hat - psi, fit_cfg.quadrature)
    err_2 = theoretical_seminorm_error(psi_hat, psi, ds.grid, sim.covariate, sim.kl_terms)
    return bool(model.diagnostics.converged), err_n, err_2, model.basis.intervals, model.rho


def _run_all(tasks, jobs):
    if jobs is None or jobs <= 1:
        return [_one_replication(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_one_replication, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def rate_experiment(
    base: SimConfig,
    ns: Sequence[int],
    reps: int,
    fit_config: Optional[FitConfig] = None,
    jobs: int = 1,
) -> RateReport:
    """Mean estimation error against ``n`` under the automatic k/rho rule, with its log-log slope."""
    ns = [int(n) for n in ns]
    if len(set(ns)) < 4 or sorted(ns) != ns or len(set(ns)) != len(ns):
        raise ValueError("ns needs at least 4 distinct, increasing sample sizes")
    if reps < 10:
        raise ValueError("reps must be >= 10")
    fit_config = fit_config or FitConfig(alpha=base.alpha, auto_k_rho=True)
    if not fit_config.auto_k_rho or fit_config.alpha != base.alpha:
        fit_config = replace(fit_config, auto_k_rho=True, alpha=base.alpha)
    tasks = [
        (replace(base, n=n, seed=replication_seed(base.seed, n, r)), fit_config) for n in ns for r in range(reps)
    ]
    results = _run_all(tasks, jobs)
    rows = []
    for i, n in enumerate(ns):
        chunk = results[i * reps : (i + 1) * reps]
        ok = [(e_n, e_2) for conv, e_n, e_2, _, _ in chunk if conv]
        bad = reps - len(ok)
        if bad:
            log.warning("n=%d: %d of %d replications did not converge and were excluded", n, bad, reps)
        if not ok:
            raise RuntimeError(f"no converged replication at n={n}")
        e = np.array(ok)
        se = e.std(axis=0, ddof=1) / np.sqrt(len(ok)) if len(ok) > 1 else np.full(2, np.nan)
        rows.append(
            RateRow(n, len(ok), bad, float(e[:, 0].mean()), float(se[0]), float(e[:, 1].mean()), float(se[1]),
                    chunk[0][3], chunk[0][4])
        )
    slope, slope_se = _loglog_slope([r.n for r in rows], [r.mean_err_n for r in rows])
    settings = {"sim": asdict(base), "reps": reps, "degree": fit_config.degree,
                "penalty_order": fit_config.penalty_order, "quadrature": fit_config.quadrature}
    return RateReport(rows, slope, slope_se, fit_config.smoothness, settings)


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


@dataclass
class CoverageResult:
    alpha: float
    n_train: int
    n_test: int
    coverage: float
    strict_coverage: float
    count_le: int
    count_lt: int
    converged: bool

    def to_dict(self) -> dict:
        return asdict(self)


def coverage_experiment(config: SimConfig, n_test: int, fit_config: Optional[FitConfig] = None) -> CoverageResult:
    """Fit on ``config.n`` pairs, then count fresh pairs with ``y <= predicted alpha-quantile``.

    ``count_lt`` (strict inequality) is reported separately so ties are visible.
    """
    if n_test < 100:
        raise ValueError("need at least 100 test pairs")
    fit_config = fit_config or FitConfig(alpha=config.alpha, auto_k_rho=True)
    if fit_config.alpha != config.alpha:
        fit_config = replace(fit_config, alpha=config.alpha)
    train, _ = simulate_dataset(config)
    test, _ = simulate_dataset(replace(config, n=n_test, seed=holdout_seed(config.seed)))
    model = fit(train, fit_config)
    pred = predict_values(model, test.grid, test.curves)
    le = int(np.sum(test.responses <= pred))
    lt = int(np.sum(test.responses < pred))
    return CoverageResult(config.alpha, config.n, n_test, le / n_test, lt / n_test, le, lt,
                          bool(model.diagnostics.converged))


def dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
