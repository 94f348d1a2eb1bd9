import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from funcquant.estimator import FitConfig, empirical_seminorm, fit, predict_dataset
from funcquant.funcdata import center_curves
from funcquant.simharness import (
    PSI_LIBRARY,
    RateReport,
    SimConfig,
    brownian_paths,
    brownian_quadratic_form,
    coverage_experiment,
    draw_noise,
    kl_eigenpairs,
    kl_paths,
    noise_shift,
    rate_experiment,
    replication_seed,
    simulate_dataset,
    theoretical_seminorm_error,
)


def test_noise_shift_values():
    assert noise_shift(SimConfig(alpha=0.5)) == 0.0
    assert noise_shift(SimConfig(alpha=0.9)) == pytest.approx(-1.2815515655, abs=1e-9)
    assert noise_shift(SimConfig(alpha=0.9, sigma=2.0)) == pytest.approx(-2.563103131, abs=1e-8)
    assert noise_shift(SimConfig(noise="exponential", alpha=0.5)) == pytest.approx(-np.log(2.0), abs=1e-15)
    assert noise_shift(SimConfig(sigma=0.0, alpha=0.9)) == 0.0


@pytest.mark.parametrize("noise", ["gaussian", "student_t", "exponential"])
@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_noise_quantile_calibration(noise, alpha):
    cfg = SimConfig(noise=noise, alpha=alpha, df=3.0)
    e = draw_noise(cfg, 10**6, np.random.default_rng(17))
    assert abs(np.quantile(e, alpha)) < 0.01


def test_sim_config_validation():
    for kw in ({"n": 0}, {"M": 1}, {"covariate": "ou"}, {"psi": "exp"}, {"noise": "cauchy"}, {"sigma": -1.0},
               {"alpha": 1.0}, {"kl_terms": 0}):
        with pytest.raises(ValueError):
            SimConfig(**kw)


def test_simulation_is_seeded():
    a, pa = simulate_dataset(SimConfig(n=20, seed=5))
    b, pb = simulate_dataset(SimConfig(n=20, seed=5))
    c, _ = simulate_dataset(SimConfig(n=20, seed=6))
    np.testing.assert_array_equal(a.curves, b.curves)
    np.testing.assert_array_equal(a.responses, b.responses)
    np.testing.assert_array_equal(pa, PSI_LIBRARY["sin"](a.grid))
    assert not np.array_equal(a.curves, c.curves)
    assert not a.centered


def test_noiseless_data_is_recovered():
    cfg = SimConfig(n=200, sigma=0.0, psi="cubic", seed=1)
    ds, psi = simulate_dataset(cfg)
    w = np.full(ds.M, 0.01)
    w[[0, -1]] = 0.005
    np.testing.assert_allclose(ds.responses, ds.curves @ (w * psi), atol=1e-14)
    # sample-mean centering leaves the constant <psi, mean curve> in y; the intercept absorbs it
    model = fit(ds, FitConfig(alpha=0.5, intervals=8, rho=1e-10, intercept=True))
    assert np.max(np.abs(predict_dataset(model, ds) - ds.responses)) < 1e-3
    raw = fit(ds, FitConfig(alpha=0.5, intervals=8, rho=1e-10), center=False)
    assert np.max(np.abs(raw.fitted - ds.responses)) < 1e-3


def test_noiseless_sin_is_recovered_within_approximation_error():
    ds, _ = simulate_dataset(SimConfig(n=200, sigma=0.0, psi="sin", seed=1))
    model = fit(ds, FitConfig(alpha=0.5, intervals=8, rho=1e-10, intercept=True))
    assert np.max(np.abs(predict_dataset(model, ds) - ds.responses)) < 1e-3


def test_brownian_variance():
    X = brownian_paths(10**4, np.linspace(0, 1, 101), np.random.default_rng(0))
    assert 0.94 <= X[:, -1].var(ddof=1) <= 1.06
    assert np.all(X[:, 0] == 0.0)


def test_kl_paths_bounded_with_brownian_covariance():
    g = np.linspace(0, 1, 51)
    X = kl_paths(20000, g, 20, np.random.default_rng(1))
    lam, _ = kl_eigenpairs(20, g)
    assert np.max(np.abs(X)) <= np.sqrt(3.0) * np.sum(np.sqrt(2 * lam)) + 1e-12
    emp = X.T @ X / X.shape[0]
    assert np.max(np.abs(emp - np.minimum.outer(g, g))) < 0.05


def test_theoretical_seminorm_examples():
    g = np.linspace(0, 1, 201)
    assert theoretical_seminorm_error(g, g, g) == 0.0
    assert theoretical_seminorm_error(np.ones(201), np.zeros(201), g) == pytest.approx(1 / 3, abs=1e-6)
    # u(t) = t: double integral of min(s, t) s t = 2/15
    assert theoretical_seminorm_error(g, 0 * g, g) == pytest.approx(2 / 15, abs=1e-6)
    with pytest.raises(ValueError):
        theoretical_seminorm_error(g, g, g, covariate="ou")


def test_kl_seminorm_closed_form():
    g = np.linspace(0, 1, 401)
    J = 20
    omega = (np.arange(1, J + 1) - 0.5) * np.pi
    exact = float(np.sum(2.0 / omega**4))
    got = theoretical_seminorm_error(np.ones(g.size), np.zeros(g.size), g, "karhunen_loeve", J)
    assert got == pytest.approx(exact, rel=1e-6)


@given(st.integers(0, 2**31), st.sampled_from(["brownian", "karhunen_loeve"]))
def test_theoretical_seminorm_nonnegative(seed, law):
    rng = np.random.default_rng(seed)
    g = np.sort(np.concatenate([[0.0, 1.0], rng.random(int(rng.integers(0, 30)))]))
    g = np.unique(g)
    assert theoretical_seminorm_error(rng.standard_normal(g.size), np.zeros(g.size), g, law) >= 0.0


def test_brownian_form_matches_dense_quadrature():
    g = np.linspace(0, 1, 41)
    u = np.cos(3 * g) - g**2
    fine = np.linspace(0, 1, 4001)
    uf = np.interp(fine, g, u)
    w = np.full(fine.size, fine[1])
    w[[0, -1]] /= 2
    dense = (w * uf) @ np.minimum.outer(fine, fine) @ (w * uf)
    assert brownian_quadratic_form(u, g) == pytest.approx(dense, rel=1e-6)


def test_empirical_vs_theoretical_seminorm():
    ds, _ = simulate_dataset(SimConfig(n=2000, seed=8))
    u = np.sin(2 * np.pi * ds.grid) + ds.grid
    emp = empirical_seminorm(center_curves(ds), u)
    theo = theoretical_seminorm_error(u, 0 * u, ds.grid)
    assert abs(emp - theo) / theo < 0.1


def test_replication_seed_is_stable():
    assert replication_seed(7, 100, 3) == replication_seed(7, 100, 3)
    seeds = {replication_seed(7, n, r) for n in (100, 200) for r in range(20)}
    assert len(seeds) == 40


@pytest.fixture(scope="module")
def small_report():
    base = SimConfig(sigma=0.5, seed=3)
    return rate_experiment(base, [40, 60, 90, 135], 10)


def test_rate_report_structure(small_report):
    rep = small_report
    assert [r.n for r in rep.rows] == [40, 60, 90, 135]
    assert all(r.reps_used + r.nonconverged == 10 for r in rep.rows)
    assert rep.theoretical_slope == pytest.approx(-4 / 9)
    lines = rep.to_csv().splitlines()
    assert lines[0] == ",".join(RateReport.CSV_COLUMNS)
    assert len(lines) == 5
    d = json.loads(json.dumps(rep.to_dict()))
    assert d["slope"] == rep.slope and len(d["rows"]) == 4


def test_rate_experiment_deterministic(small_report):
    again = rate_experiment(SimConfig(sigma=0.5, seed=3), [40, 60, 90, 135], 10)
    assert again.to_csv() == small_report.to_csv()


def test_rate_experiment_parallel_matches_serial(small_report):
    par = rate_experiment(SimConfig(sigma=0.5, seed=3), [40, 60, 90, 135], 10, jobs=2)
    assert par.to_csv() == small_report.to_csv()


def test_rate_experiment_validation():
    base = SimConfig()
    with pytest.raises(ValueError):
        rate_experiment(base, [100, 200, 400], 10)
    with pytest.raises(ValueError):
        rate_experiment(base, [100, 400, 200, 800], 10)
    with pytest.raises(ValueError):
        rate_experiment(base, [100, 200, 400, 800], 5)


def test_noiseless_rate_errors_decrease():
    # without noise the error is penalty bias, which only moves once rho = n^(-4/9) is small
    rep = rate_experiment(SimConfig(sigma=0.0, psi="quadratic", seed=0), [1000, 4000, 16000, 64000], 10)
    errs = [r.mean_err_n for r in rep.rows]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_coverage_experiment_contracts():
    res = coverage_experiment(SimConfig(n=300, alpha=0.5, sigma=0.5, seed=2), 500)
    assert res.count_lt <= res.count_le
    assert res.coverage == res.count_le / 500
    assert 0.4 < res.coverage < 0.6
    with pytest.raises(ValueError):
        coverage_experiment(SimConfig(n=300), 50)


def test_coverage_zero_noise_separates_ties():
    res = coverage_experiment(SimConfig(n=200, alpha=0.5, sigma=0.0, psi="cubic", seed=4), 200,
                              FitConfig(alpha=0.5, intervals=8, rho=1e-10))
    assert res.count_lt <= res.count_le
    assert set(res.to_dict()) >= {"coverage", "strict_coverage", "count_le", "count_lt"}
