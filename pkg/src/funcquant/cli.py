"""Command-line entry point: ``funcquant {fit,predict,simulate,rates,coverage}``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .estimator import FitConfig, QuantileModel, fit, predict_values, select_rho
from .funcdata import DataError, NearSingularWarning, load_dataset, read_curves_csv, save_dataset
from .simharness import (
    COVARIATES,
    NOISES,
    PSI_LIBRARY,
    SimConfig,
    coverage_experiment,
    dump_json,
    noise_shift,
    rate_experiment,
    simulate_dataset,
)
from .solver import SolverSingularityError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("funcquant")

# built-in defaults; --config JSON overrides these, explicit flags override both
DEFAULTS = {
    "alpha": 0.5,
    "k": 8,
    "degree": 3,
    "m": 2,
    "rho": 1e-2,
    "quadrature": "trapezoid",
    "auto": False,
    "p": None,
    "seed": 0,
    "jobs": 1,
    "folds": 5,
    "rho_grid": None,
    "allow_nonconverged": False,
    "intercept": False,
    "ns": "100,200,400,800",
    "reps": 20,
    "n": 200,
    "n_test": 1000,
    "grid_size": 101,
    "covariate": "brownian",
    "kl_terms": 20,
    "psi": "sin",
    "noise": "gaussian",
    "sigma": 1.0,
    "df": 5.0,
}


class UsageError(Exception):
    pass


class NumericalFailure(Exception):
    pass


def _float_list(text: str):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _int_list(text: str):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}") from None


def _add_fit_flags(p):
    g = p.add_argument_group("estimator")
    g.add_argument("--alpha", type=float, help="quantile order in (0, 1)")
    g.add_argument("--k", type=int, help="number of equal subintervals of [0, 1]")
    g.add_argument("--degree", type=int, help="spline degree q")
    g.add_argument("--m", type=int, help="order of the penalized derivative")
    g.add_argument("--rho", type=float, help="penalty weight")
    g.add_argument("--quadrature", choices=["trapezoid", "simpson"])
    g.add_argument("--auto", action="store_true", default=None, help="k and rho from the sample size (needs --p)")
    g.add_argument("--p", type=float, help="assumed smoothness for --auto")
    g.add_argument("--intercept", action="store_true", default=None, help="add an unpenalized intercept")
    g.add_argument("--allow-nonconverged", action="store_true", default=None)


def _add_sim_flags(p):
    g = p.add_argument_group("simulation")
    g.add_argument("--n", type=int, help="number of curves")
    g.add_argument("--grid-size", type=int, help="uniform grid points per curve")
    g.add_argument("--covariate", choices=COVARIATES)
    g.add_argument("--kl-terms", type=int)
    g.add_argument("--psi", choices=tuple(PSI_LIBRARY))
    g.add_argument("--noise", choices=NOISES)
    g.add_argument("--sigma", type=float)
    g.add_argument("--df", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funcquant", description="Quantile regression on functional covariates.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default flag values")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help="worker processes for replications")

    p = sub.add_parser("fit", parents=[common], help="fit a model to curves and responses")
    p.add_argument("--curves", help="curves CSV")
    p.add_argument("--responses", help="responses CSV")
    p.add_argument("--folds", type=int, help="cross-validation folds for --rho-grid")
    p.add_argument("--rho-grid", type=_float_list, help="candidate penalties, comma-separated")
    _add_fit_flags(p)

    p = sub.add_parser("predict", parents=[common], help="predict quantiles for new curves")
    p.add_argument("--model", help="model JSON written by fit")
    p.add_argument("--curves", help="curves CSV")

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic dataset")
    p.add_argument("--alpha", type=float)
    _add_sim_flags(p)

    p = sub.add_parser("rates", parents=[common], help="error-vs-n Monte Carlo experiment")
    p.add_argument("--ns", type=_int_list, help="sample sizes, comma-separated")
    p.add_argument("--reps", type=int)
    _add_fit_flags(p)
    _add_sim_flags(p)

    p = sub.add_parser("coverage", parents=[common], help="out-of-sample coverage experiment")
    p.add_argument("--n-test", type=int, help="fresh evaluation pairs")
    _add_fit_flags(p)
    _add_sim_flags(p)
    return parser


def _settings(args) -> dict:
    merged = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                extra = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(extra, dict):
            raise DataError("config file must hold a JSON object")
        unknown = set(k.replace("-", "_") for k in extra) - set(DEFAULTS) - {"curves", "responses", "model", "out"}
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update({k.replace("-", "_"): v for k, v in extra.items()})
    for key, val in vars(args).items():
        if val is not None:
            merged[key] = val
    for key in ("ns",):
        if isinstance(merged[key], str):
            merged[key] = _int_list(merged[key])
    if isinstance(merged.get("rho_grid"), str):
        merged["rho_grid"] = _float_list(merged["rho_grid"])
    return merged


def _fit_config(s: dict) -> FitConfig:
    if s["auto"] and s["p"] is None:
        raise UsageError("--auto requires --p")
    try:
        return FitConfig(
            alpha=float(s["alpha"]),
            degree=int(s["degree"]),
            intervals=int(s["k"]),
            penalty_order=int(s["m"]),
            rho=float(s["rho"]),
            quadrature=s["quadrature"],
            auto_k_rho=bool(s["auto"]),
            smoothness=float(s["p"]) if s["p"] is not None else 2.0,
            intercept=bool(s["intercept"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _sim_config(s: dict) -> SimConfig:
    try:
        return SimConfig(
            n=int(s["n"]),
            M=int(s["grid_size"]),
            covariate=s["covariate"],
            kl_terms=int(s["kl_terms"]),
            psi=s["psi"],
            noise=s["noise"],
            sigma=float(s["sigma"]),
            df=float(s["df"]),
            alpha=float(s["alpha"]),
            seed=int(s["seed"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _require(s: dict, *keys):
    missing = [k for k in keys if not s.get(k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def cmd_fit(s: dict) -> int:
    _require(s, "curves", "responses", "out")
    config = _fit_config(s)
    data = load_dataset(s["curves"], s["responses"])
    if s["rho_grid"]:
        rho = select_rho(data, config, s["rho_grid"], int(s["folds"]), int(s["seed"]))
        config = replace(config, rho=rho, auto_k_rho=False, intervals=config.resolved(data.n)[0])
        print(f"cross-validated rho = {rho:g}")
    model = fit(data, config)
    diag = model.diagnostics
    print(
        f"fit: n={data.n} M={data.M} alpha={model.alpha:g} k={model.basis.intervals} q={model.basis.degree} "
        f"m={model.penalty_order} rho={model.rho:.6g}"
    )
    print(
        f"objective={diag.objective_trace[-1]:.10g} iterations={diag.iterations} converged={diag.converged} "
        f"lambda_min={diag.lambda_min:.3g}"
    )
    if not diag.converged and not s["allow_nonconverged"]:
        raise NumericalFailure("solver did not converge (use --allow-nonconverged to keep the result)")
    model.save(s["out"])
    print(f"model written to {s['out']}")
    return EXIT_OK


def cmd_predict(s: dict) -> int:
    _require(s, "model", "curves", "out")
    model = QuantileModel.load(s["model"])
    grid, ids, X = read_curves_csv(s["curves"])
    pred = predict_values(model, grid, X)
    with open(s["out"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "quantile_prediction"])
        for cid, v in zip(ids, pred):
            w.writerow([cid, repr(float(v))])
    print(f"predicted {len(ids)} curves (alpha={model.alpha:g}); written to {s['out']}")
    return EXIT_OK


def cmd_simulate(s: dict) -> int:
    _require(s, "out")
    sim = _sim_config(s)
    data, psi = simulate_dataset(sim)
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(data, out / "curves.csv", out / "responses.csv")
    truth = {
        "grid": [float(v) for v in data.grid],
        "psi_true": [float(v) for v in psi],
        "noise_shift": noise_shift(sim),
        "config": asdict(sim),
    }
    dump_json(truth, out / "truth.json")
    print(f"simulated n={sim.n} curves on {sim.M} points into {out}/ (curves.csv, responses.csv, truth.json)")
    return EXIT_OK


def _prefix(out: str, suffix: str) -> Path:
    p = Path(out)
    if p.suffix in (".csv", ".json"):
        p = p.with_suffix("")
    return p.with_name(p.name + suffix)


def cmd_rates(s: dict) -> int:
    _require(s, "out")
    if s["p"] is None:
        s = dict(s, p=2.0)
    config = replace(_fit_config(dict(s, auto=True)), auto_k_rho=True)
    sim = _sim_config(s)
    try:
        report = rate_experiment(sim, s["ns"], int(s["reps"]), config, jobs=int(s["jobs"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    except RuntimeError as exc:
        raise NumericalFailure(str(exc)) from None
    csv_path, json_path = _prefix(s["out"], ".csv"), _prefix(s["out"], ".json")
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    dump_json(report.to_dict(), json_path)
    for r in report.rows:
        print(f"n={r.n:6d} k={r.intervals} rho={r.rho:.4g} reps={r.reps_used} err_n={r.mean_err_n:.4g} err_2={r.mean_err_2:.4g}")
    print(f"log-log slope {report.slope:.3f} +/- {report.slope_se:.3f} (theory {report.theoretical_slope:.3f})")
    print(f"written {csv_path} and {json_path}")
    return EXIT_OK


def cmd_coverage(s: dict) -> int:
    _require(s, "out")
    config = _fit_config(s)
    sim = _sim_config(s)
    try:
        res = coverage_experiment(sim, int(s["n_test"]), config)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not res.converged and not s["allow_nonconverged"]:
        raise NumericalFailure("solver did not converge on the training sample")
    out = Path(s["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_json(res.to_dict(), out)
    print(
        f"coverage alpha={res.alpha:g}: P(y <= q) = {res.coverage:.4f}, P(y < q) = {res.strict_coverage:.4f} "
        f"(n={res.n_train}, test={res.n_test}); written to {out}"
    )
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "rates": cmd_rates,
    "coverage": cmd_coverage,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    command = args.command
    try:
        settings = _settings(args)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NearSingularWarning)
            return COMMANDS[command](settings)
    except UsageError as exc:
        print(f"funcquant {command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"funcquant {command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalFailure, SolverSingularityError, np.linalg.LinAlgError) as exc:
        print(f"funcquant {command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
