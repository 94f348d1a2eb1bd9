import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from funcquant import solver
from funcquant.bspline import make_basis, penalty_matrix
from funcquant.funcdata import NearSingularWarning, assemble_system
from funcquant.solver import (
    CheckLoss,
    FitDiagnostics,
    SolverConfig,
    SolverSingularityError,
    check_loss,
    irls_fit,
    kkt_residual,
    objective,
    smoothed_objective,
    subgradient_oracle,
)

alphas = st.floats(0.01, 0.99)


def random_problem(seed, n=40, q=3, k=4, m=2, rho=1e-2):
    rng = np.random.default_rng(seed)
    b = make_basis(q, k)
    A = rng.standard_normal((n, b.dim)) / np.sqrt(b.dim)
    y = A @ rng.standard_normal(b.dim) + rng.standard_normal(n)
    G = penalty_matrix(b, m)
    return A, y, G, rho


def test_check_loss_examples():
    assert check_loss(CheckLoss(0.5), -3.0) == 3.0
    assert check_loss(CheckLoss(0.75), 2.0) == 3.0
    assert check_loss(CheckLoss(0.75), -2.0) == 1.0
    with pytest.raises(ValueError):
        CheckLoss(0.0)
    with pytest.raises(ValueError):
        CheckLoss(1.0)


@given(alphas, st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20))
def test_check_loss_identity(alpha, us):
    u = np.array(us)
    pinball = 2.0 * (alpha * np.maximum(u, 0) + (1 - alpha) * np.maximum(-u, 0))
    got = check_loss(CheckLoss(alpha), u)
    np.testing.assert_allclose(got, pinball, rtol=1e-12, atol=1e-9)
    assert np.all(got >= 0)
    assert np.all((got == 0) == (u == 0))


def test_objective_examples(rng):
    loss = CheckLoss(0.5)
    assert objective([1.0], [[1.0]], [2.0], 0.0, [[1.0]], loss) == 1.0
    A, y, G, rho = random_problem(1)
    assert objective(np.zeros(A.shape[1]), A, y, rho, G, loss) == pytest.approx(np.mean(np.abs(y)))
    theta = np.ones(A.shape[1])
    assert objective(theta, A, A @ theta, 5.0, G, loss) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(ValueError):
        objective(np.zeros(3), A, y, rho, G, loss)
    with pytest.raises(ValueError):
        objective(theta, A, y[:-1], rho, G, loss)


@given(st.integers(0, 2**31), alphas, st.floats(0.0, 1.0), st.sampled_from([0.0, 1e-2, 1.0]))
def test_objective_convex(seed, alpha, lam, rho):
    A, y, G, _ = random_problem(seed, n=15)
    rng = np.random.default_rng(seed + 1)
    t1, t2 = rng.standard_normal((2, A.shape[1])) * 3
    loss = CheckLoss(alpha)
    mid = objective(lam * t1 + (1 - lam) * t2, A, y, rho, G, loss)
    ends = lam * objective(t1, A, y, rho, G, loss) + (1 - lam) * objective(t2, A, y, rho, G, loss)
    assert mid <= ends + 1e-12 * (1 + abs(ends))


def test_smoothed_objective_bounds_exact(rng):
    A, y, G, rho = random_problem(2)
    theta = rng.standard_normal(A.shape[1])
    loss = CheckLoss(0.3)
    exact = objective(theta, A, y, rho, G, loss)
    for eps in (1.0, 1e-3):
        sm = smoothed_objective(theta, A, y, rho, G, loss, eps)
        assert exact <= sm <= exact + eps


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_irls_stage_monotone(seed, alpha):
    A, y, G, rho = random_problem(seed, n=60)
    _, diag = irls_fit(assemble_system(A, G, rho), y, CheckLoss(alpha))
    assert diag.stage_traces
    for trace in diag.stage_traces:
        t = np.array(trace)
        assert np.all(np.diff(t) <= 1e-12 * (1 + np.abs(t[:-1])))


def test_scalar_brute_force_oracle():
    # frozen from a grid search over [-10, 10] with step 1e-4
    a = np.array([[0.3], [-1.2], [0.8], [2.0], [-0.5]])
    y = np.array([1.0, -0.4, 2.2, 0.7, -1.5])
    G, loss = np.eye(1), CheckLoss(0.25)
    theta, diag = irls_fit(assemble_system(a, G, 0.1), y, loss)
    assert diag.converged
    assert abs(objective(theta, a, y, 0.1, G, loss) - 0.69325) <= 1e-6
    assert theta[0] == pytest.approx(0.35, abs=1e-6)
    grid = np.linspace(-10, 10, 200001)
    r = y[None, :] - grid[:, None] * a[:, 0][None, :]
    brute = np.min(np.mean(np.abs(r) - 0.5 * r, axis=1) + 0.1 * grid**2)
    assert abs(objective(theta, a, y, 0.1, G, loss) - brute) <= 1e-6


@pytest.mark.parametrize("alpha", [0.2, 0.5, 0.8])
def test_solution_is_a_minimum(alpha):
    A, y, G, rho = random_problem(11, n=50)
    loss = CheckLoss(alpha)
    theta, diag = irls_fit(assemble_system(A, G, rho), y, loss)
    assert diag.converged and diag.kkt_residual < 1e-7
    f0 = objective(theta, A, y, rho, G, loss)
    dirs = np.random.default_rng(5).standard_normal((50, A.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    for d in dirs:
        for s in (1e-4, -1e-4):
            assert objective(theta + s * d, A, y, rho, G, loss) >= f0 - 1e-8


@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.5, 0.75, 0.9])
def test_quantile_gradient_condition(alpha):
    rng = np.random.default_rng(3)
    n, q = 101, 3
    A = np.ones((n, 1))
    y = rng.standard_normal(n)
    theta, _ = irls_fit(assemble_system(A, np.eye(1), 1e-12), y, CheckLoss(alpha))
    frac = np.mean(y - A @ theta < 0)
    assert alpha - (q + 1) / n <= frac <= alpha + (q + 1) / n


def test_kkt_residual_detects_non_optimum():
    A, y, G, rho = random_problem(4)
    loss = CheckLoss(0.5)
    theta, _ = irls_fit(assemble_system(A, G, rho), y, loss)
    assert kkt_residual(theta, A, y, rho, G, loss) < 1e-7
    assert kkt_residual(theta + 0.1, A, y, rho, G, loss) > 1e-3


def test_singular_without_penalty():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearSingularWarning)
        system = assemble_system(np.zeros((4, 3)), np.eye(3), 0.0)
    with pytest.raises(SolverSingularityError):
        irls_fit(system, np.arange(4.0), CheckLoss(0.5))
    assert issubclass(SolverSingularityError, np.linalg.LinAlgError)


def test_flat_direction_with_penalty_still_solves():
    b = make_basis(3, 4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearSingularWarning)
        system = assemble_system(np.zeros((4, b.dim)), penalty_matrix(b, 2), 0.5)
    theta, diag = irls_fit(system, np.arange(4.0), CheckLoss(0.5))
    assert np.all(np.isfinite(theta)) and diag.near_singular


@pytest.mark.parametrize("alpha", [0.25, 0.75])
def test_polish_stays_put_along_flat_directions(alpha):
    # identical rows and a tiny penalty leave directions on which nothing changes
    b = make_basis(3, 8)
    a = np.full(b.dim, 1.0 / b.dim)
    A = np.tile(a, (201, 1))
    y = np.random.default_rng(2).standard_normal(201)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearSingularWarning)
        system = assemble_system(A, penalty_matrix(b, 2), 1e-10)
    theta, diag = irls_fit(system, y, CheckLoss(alpha))
    assert min(diag.objective_trace) >= 0.0
    assert np.max(np.abs(theta)) < 1e3
    assert (A @ theta)[0] == pytest.approx(np.quantile(y, alpha, method="inverted_cdf"), abs=1e-9)


def test_nonconvergence_is_reported_not_raised(monkeypatch):
    A, y, G, rho = random_problem(8, n=200)
    monkeypatch.setattr(solver, "_polish", lambda A, y, G, rho, loss, theta, max_iter=None: (theta, False))
    monkeypatch.setattr(solver, "KKT_TOL", 0.0)
    _, diag = irls_fit(assemble_system(A, G, rho), y, CheckLoss(0.3), SolverConfig(max_outer=2, max_inner=1))
    assert diag.converged is False
    assert diag.iterations == 2 and len(diag.objective_trace) == 2


def test_solver_config_validation():
    for kw in (
        {"epsilon_init": 0.0},
        {"epsilon_final": 2.0},
        {"epsilon_decay": 1.0},
        {"max_outer": 0},
        {"tol": 0.0},
    ):
        with pytest.raises(ValueError):
            SolverConfig(**kw)


def test_diagnostics_dict_round_trip():
    d = FitDiagnostics([3.0, 2.5], True, 17, 1e-8, 0.25, False, 1e-12, True)
    assert FitDiagnostics.from_dict(d.to_dict()) == d


def test_oracle_basic_contracts():
    b = make_basis(2, 3)
    G = penalty_matrix(b, 1)
    A = np.random.default_rng(0).standard_normal((20, b.dim))
    system = assemble_system(A, G, 0.1)
    theta0 = subgradient_oracle(system, np.zeros(20), CheckLoss(0.5), 2000)
    assert np.max(np.abs(theta0)) < 1e-12
    y = np.random.default_rng(1).standard_normal(20)
    loss = CheckLoss(0.3)
    f4 = objective(subgradient_oracle(system, y, loss, 10_000), A, y, 0.1, G, loss)
    f5 = objective(subgradient_oracle(system, y, loss, 100_000), A, y, 0.1, G, loss)
    assert f5 <= f4
    with pytest.raises(ValueError):
        subgradient_oracle(system, y, loss, 0)
