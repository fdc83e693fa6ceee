"""Command-line interface: fit, select, evaluate, simulate, report-odds.

Every command writes its outputs plus a run manifest (resolved parameters,
seed, input digests, tool version, timestamps) into --out-dir.  Exit codes:
0 success, 2 usage or validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    BinConstructionError,
    DataValidationError,
    FoldError,
    NumericalError,
    RandomSeed,
    UpliftDataset,
    UpliftError,
    load_csv,
    read_model,
    uplift_scores,
    write_model,
)
from .glm import (
    Z_95,
    coefficient_covariance,
    fit_lasso_path,
    fit_mle,
    group_odds_ratio,
    lambda_sequence,
    odds_ratio,
)
from .metrics import descending_order, evaluate, resolve_bins
from .search import LhsConfig, MetricKind, lhs_search, nelder_mead_search
from .select import (
    RULE_ARGMAX,
    RULE_OSE,
    cross_validated_select,
    loglik_cv_select,
    q_lasso_select,
)
from .datagen import ESTIMATORS, ScenarioConfig, run_simulation

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

SELECT_METHODS = ("qlasso", "qlasso-ose", "lhs-q", "lhs-rho", "lhs-qadj",
                  "nm-base", "nm-q", "loglik-cv")


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def _manifest(command: str, args: argparse.Namespace, out_dir: Path,
              inputs: dict[str, str]) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    payload = {
        "command": command,
        "parameters": resolved,
        "input_digests": inputs,
        "tool_version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    _write_json(out_dir / "manifest.json", payload)


def _load_data(args) -> UpliftDataset:
    return load_csv(args.data, args.treatment, args.outcome)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _diag_dict(diag) -> dict:
    return {
        "loglik": diag.loglik,
        "n_iter": diag.n_iter,
        "grad_max": diag.grad_max,
        "converged": diag.converged,
        "separation": diag.separation,
    }


def cmd_fit(args) -> int:
    ds = _load_data(args)
    out = _out_dir(args)
    coeffs, diag = fit_mle(ds)
    write_model(coeffs, ds.feature_names, out / "model.json",
                meta={"method": "mle", "n": ds.n, "seed": args.seed})
    _write_json(out / "diagnostics.json", _diag_dict(diag))
    _manifest("fit", args, out, {"data": _digest(args.data)})
    if diag.separation:
        print("warning: separation detected; coefficients were clamped", file=sys.stderr)
    if not diag.converged:
        print("error: maximum-likelihood fit did not converge", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"model written to {out / 'model.json'}")
    return EXIT_OK


def _metric_for_method(method: str) -> MetricKind:
    return {"lhs-q": MetricKind.QINI, "lhs-rho": MetricKind.KENDALL,
            "lhs-qadj": MetricKind.ADJUSTED_QINI}[method]


def cmd_select(args) -> int:
    ds = _load_data(args)
    out = _out_dir(args)
    n_bins = resolve_bins(ds.n, args.J)
    seed = RandomSeed(args.seed)
    method = args.method
    report: dict = {"method": method, "J": n_bins}
    cv_table = None
    search_result = None

    if method in ("qlasso", "lhs-q", "lhs-rho", "lhs-qadj", "nm-q"):
        lambdas = lambda_sequence(ds, args.lambda_count, args.lambda_eps)
        path = fit_lasso_path(ds, lambdas)
        path.to_csv(out / "path.csv")
        selection = q_lasso_select(path, ds, n_bins)
        report["path_adjusted_qini"] = list(selection.path_metric_values)
        if method == "qlasso":
            coeffs = selection.coefficients
            report.update({"chosen_lambda": selection.chosen_lambda,
                           "chosen_index": selection.chosen_index,
                           "support": list(selection.support),
                           "rule": selection.rule,
                           "warning": selection.warning,
                           "diagnostics": _diag_dict(selection.diagnostics)})
        elif method == "nm-q":
            init = path.coeffs[selection.chosen_index]
            search_result = nelder_mead_search(init, ds, MetricKind.ADJUSTED_QINI, n_bins)
            coeffs = search_result.coefficients
            report.update({"init_lambda": selection.chosen_lambda,
                           "metric_value": search_result.value})
        else:
            cfg = LhsConfig(args.L, args.radius_rel, args.radius_floor, True, seed)
            search_result = lhs_search(path, ds, _metric_for_method(method), n_bins,
                                       cfg, keep_log=args.verbose)
            coeffs = search_result.coefficients
            report.update({"metric": _metric_for_method(method).value,
                           "metric_value": search_result.value,
                           "origin": search_result.origin})
    elif method == "qlasso-ose":
        cv_table, selection = cross_validated_select(
            ds, args.K, MetricKind.ADJUSTED_QINI, n_bins, seed, RULE_OSE,
            lambda_count=args.lambda_count, lambda_eps=args.lambda_eps)
        coeffs = selection.coefficients
        report.update({"chosen_lambda": selection.chosen_lambda,
                       "chosen_index": selection.chosen_index,
                       "support": list(selection.support),
                       "rule": selection.rule,
                       "diagnostics": _diag_dict(selection.diagnostics)})
    elif method == "loglik-cv":
        selection = loglik_cv_select(ds, args.K, seed,
                                     lambda_count=args.lambda_count,
                                     lambda_eps=args.lambda_eps)
        cv_table = selection.cv_table
        coeffs = selection.coefficients
        report.update({"chosen_lambda": selection.chosen_lambda,
                       "chosen_index": selection.chosen_index,
                       "support": list(selection.support),
                       "rule": selection.rule,
                       "diagnostics": _diag_dict(selection.diagnostics)})
    elif method == "nm-base":
        init, diag = fit_mle(ds)
        search_result = nelder_mead_search(init, ds, MetricKind.ADJUSTED_QINI, n_bins)
        coeffs = search_result.coefficients
        report.update({"metric_value": search_result.value,
                       "diagnostics": _diag_dict(diag)})
    else:  # pragma: no cover - argparse choices guard this
        raise DataValidationError(f"unknown method {method!r}")

    if cv_table is not None:
        cv_table.to_csv(out / "cv_table.csv")
        from .plots import save_cv_curve

        save_cv_curve(cv_table.lambdas, cv_table.mean, cv_table.se,
                      report["chosen_lambda"], out / "cv_curve.svg",
                      cv_table.metric_label)
        report["cv_warnings"] = list(cv_table.warnings)
    if search_result is not None:
        _write_json(out / "search.json", search_result.to_json_dict(args.verbose))
    write_model(coeffs, ds.feature_names, out / "model.json",
                meta={"method": method, "seed": args.seed, "J": n_bins})
    _write_json(out / "selection.json", report)
    _manifest("select", args, out, {"data": _digest(args.data)})
    print(f"model written to {out / 'model.json'}")
    return EXIT_OK


def _group_block(ds: UpliftDataset, pred: np.ndarray, fraction: float, top: bool) -> dict:
    order = descending_order(pred)
    m = int(np.ceil(fraction * ds.n - 1e-9))
    rows = order[:m] if top else order[ds.n - m:]
    t = ds.treatment[rows]
    y = ds.outcome[rows]
    n_t = int(t.sum())
    n_c = int(rows.size - n_t)
    if n_t == 0 or n_c == 0:
        raise DataValidationError(
            "top/bottom group lacks a treatment arm; use a larger fraction"
        )
    observed = float((y @ t) / n_t - (y @ (1 - t)) / n_c)
    return {
        "fraction": fraction,
        "n": int(rows.size),
        "observed_uplift": observed,
        "mean_predicted_uplift": float(pred[rows].mean()),
    }


def cmd_evaluate(args) -> int:
    ds = _load_data(args)
    out = _out_dir(args)
    coeffs, names, _meta = read_model(args.model)
    if names != ds.feature_names:
        missing = [s for s in names if s not in ds.feature_names]
        if missing:
            raise DataValidationError(f"data is missing model features {missing}")
        ds = ds.select_features([ds.feature_names.index(s) for s in names])
    n_bins = resolve_bins(ds.n, args.J)
    pred = uplift_scores(coeffs, ds.features)
    report = evaluate(ds, pred, n_bins)

    payload = {
        "n": ds.n,
        "J": n_bins,
        "qini": report.qini,
        "kendall": report.kendall,
        "adjusted_qini": report.adjusted_qini,
        "overall_uplift": report.curve.overall,
        "top_group": _group_block(ds, pred, args.top_fraction, top=True),
        "bottom_group": _group_block(ds, pred, args.top_fraction, top=False),
    }
    _write_json(out / "report.json", payload)
    report.curve.to_csv(out / "qini_curve.csv")
    report.bins.to_csv(out / "bins.csv")
    from .plots import save_bin_barplot, save_qini_curve

    save_qini_curve(report.curve, out / "qini_curve.svg")
    save_bin_barplot(report.bins, out / "bins.svg")
    _manifest("evaluate", args, out,
              {"data": _digest(args.data), "model": _digest(args.model)})
    print(f"qini={report.qini:.6g} kendall={report.kendall:.6g} "
          f"adjusted_qini={report.adjusted_qini:.6g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    estimators = ([e.strip() for e in args.estimators.split(",")] if args.estimators
                  else list(ESTIMATORS))
    base = None
    inputs = {}
    if args.base_csv:
        base = load_csv(args.base_csv, args.treatment, args.outcome)
        inputs["base_csv"] = _digest(args.base_csv)
    cfg = ScenarioConfig(
        depth=args.depth,
        k=args.k,
        n_s=args.n,
        replications=args.reps,
        seed=RandomSeed(args.seed),
        n_bins=args.J if args.J else 10,
        p=base.p if base is not None else args.p,
        n_base=args.n_base,
        n_trees=args.trees,
        lambda_count=args.lambda_count,
        lambda_eps=args.lambda_eps,
        lhs_samples=args.L,
        lhs_radius_rel=args.radius_rel,
        lhs_radius_floor=args.radius_floor,
    )
    result = run_simulation(cfg, estimators, base=base, threads=args.threads)
    result.to_csv(out / "results.csv")
    (out / "results.txt").write_text(result.to_text(), encoding="utf-8")
    _manifest("simulate", args, out, inputs)
    print(result.to_text())
    return EXIT_OK


def cmd_report_odds(args) -> int:
    ds = _load_data(args)
    out = _out_dir(args)
    coeffs, names, _meta = read_model(args.model)
    if names != ds.feature_names:
        ds = ds.select_features([ds.feature_names.index(s) for s in names])
    variables = ([v.strip() for v in args.variables.split(",")] if args.variables
                 else list(names))
    unknown = [v for v in variables if v not in names]
    if unknown:
        raise DataValidationError(f"unknown variables {unknown}")

    cov = None
    warning = None
    try:
        cov = coefficient_covariance(coeffs, ds)
    except NumericalError as exc:
        warning = f"covariance unavailable ({exc}); reporting point estimates only"
        print(f"warning: {warning}", file=sys.stderr)

    p = coeffs.p

    def ci(log_value, variance):
        if cov is None or variance is None:
            return "", ""
        half = Z_95 * math.sqrt(max(variance, 0.0))
        return repr(math.exp(log_value - half)), repr(math.exp(log_value + half))

    rows = []
    for name in variables:
        j = names.index(name)
        var_b = cov[1 + j, 1 + j] if cov is not None else None
        var_bd = (cov[1 + j, 1 + j] + cov[2 + p + j, 2 + p + j]
                  + 2 * cov[1 + j, 2 + p + j]) if cov is not None else None
        or0 = odds_ratio(coeffs, j, 0)
        or1 = odds_ratio(coeffs, j, 1)
        lo0, hi0 = ci(math.log(or0), var_b)
        lo1, hi1 = ci(math.log(or1), var_bd)
        rows.append([name, repr(or0), lo0, hi0, repr(or1), lo1, hi1])
    with (out / "odds_ratios.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "or_control", "or_control_lo", "or_control_hi",
                         "or_treated", "or_treated_lo", "or_treated_hi"])
        writer.writerows(rows)

    if args.groups:
        group_rows = []
        with Path(args.groups).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            required = {"feature", "mean_a", "mean_b"}
            if reader.fieldnames is None or not required.issubset(reader.fieldnames):
                raise DataValidationError(
                    f"groups file must have columns {sorted(required)}"
                )
            for record in reader:
                name = record["feature"]
                if name not in names:
                    raise DataValidationError(f"groups file names unknown feature {name!r}")
                j = names.index(name)
                diff = float(record["mean_a"]) - float(record["mean_b"])
                g0 = group_odds_ratio(coeffs, j, 0, float(record["mean_a"]),
                                      float(record["mean_b"]))
                g1 = group_odds_ratio(coeffs, j, 1, float(record["mean_a"]),
                                      float(record["mean_b"]))
                var_b = cov[1 + j, 1 + j] if cov is not None else None
                var_bd = (cov[1 + j, 1 + j] + cov[2 + p + j, 2 + p + j]
                          + 2 * cov[1 + j, 2 + p + j]) if cov is not None else None
                lo_g0, hi_g0 = ci(math.log(g0), var_b * diff * diff if var_b is not None else None)
                lo_g1, hi_g1 = ci(math.log(g1), var_bd * diff * diff if var_bd is not None else None)
                group_rows.append([name, repr(diff), repr(g0), lo_g0, hi_g0,
                                   repr(g1), lo_g1, hi_g1])
        with (out / "group_odds_ratios.csv").open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", "diff", "group_or_control", "group_or_control_lo",
                             "group_or_control_hi", "group_or_treated",
                             "group_or_treated_lo", "group_or_treated_hi"])
            writer.writerows(group_rows)

    inputs = {"data": _digest(args.data), "model": _digest(args.model)}
    if args.groups:
        inputs["groups"] = _digest(args.groups)
    _manifest("report-odds", args, out, inputs)
    print(f"odds ratios written to {out / 'odds_ratios.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qinireg",
        description="Qini-based uplift regression: fit, select, evaluate, simulate.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_data_args(p):
        p.add_argument("--data", required=True, help="CSV file with header row")
        p.add_argument("--treatment", required=True, help="treatment column name")
        p.add_argument("--outcome", required=True, help="outcome column name")

    def add_common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1)

    p_fit = sub.add_parser("fit", help="maximum-likelihood fit of the uplift model")
    add_data_args(p_fit)
    add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_sel = sub.add_parser("select", help="model selection and metric-driven search")
    add_data_args(p_sel)
    add_common(p_sel)
    p_sel.add_argument("--method", required=True, choices=SELECT_METHODS)
    p_sel.add_argument("--J", type=int, default=None, help="bin count")
    p_sel.add_argument("--K", type=int, default=5, help="cross-validation folds")
    p_sel.add_argument("--L", type=int, default=100, help="hypercube samples per center")
    p_sel.add_argument("--radius-rel", type=float, default=0.5)
    p_sel.add_argument("--radius-floor", type=float, default=0.1)
    p_sel.add_argument("--lambda-count", type=int, default=100)
    p_sel.add_argument("--lambda-eps", type=float, default=None)
    p_sel.add_argument("--verbose", action="store_true",
                       help="include the candidate evaluation log in search.json")
    p_sel.set_defaults(func=cmd_select)

    p_eval = sub.add_parser("evaluate", help="score a model file on a dataset")
    add_data_args(p_eval)
    add_common(p_eval)
    p_eval.add_argument("--model", required=True, help="model JSON file")
    p_eval.add_argument("--J", type=int, default=None)
    p_eval.add_argument("--top-fraction", type=float, default=0.2)
    p_eval.set_defaults(func=cmd_evaluate)

    p_sim = sub.add_parser("simulate", help="replicated synthetic-data comparison")
    add_common(p_sim)
    p_sim.add_argument("--depth", type=int, required=True)
    p_sim.add_argument("--k", type=int, required=True)
    p_sim.add_argument("--n", type=int, required=True, help="synthetic sample size")
    p_sim.add_argument("--reps", type=int, required=True)
    p_sim.add_argument("--p", type=int, default=20)
    p_sim.add_argument("--n-base", type=int, default=None)
    p_sim.add_argument("--J", type=int, default=None)
    p_sim.add_argument("--trees", type=int, default=50)
    p_sim.add_argument("--estimators", default=None,
                       help="comma-separated subset of: " + ", ".join(ESTIMATORS))
    p_sim.add_argument("--L", type=int, default=100)
    p_sim.add_argument("--radius-rel", type=float, default=0.5)
    p_sim.add_argument("--radius-floor", type=float, default=0.1)
    p_sim.add_argument("--lambda-count", type=int, default=100)
    p_sim.add_argument("--lambda-eps", type=float, default=None)
    p_sim.add_argument("--base-csv", default=None,
                       help="optional base population CSV (else synthetic)")
    p_sim.add_argument("--treatment", default="treatment")
    p_sim.add_argument("--outcome", default="outcome")
    p_sim.set_defaults(func=cmd_simulate)

    p_odds = sub.add_parser("report-odds", help="odds-ratio table with 95% intervals")
    add_data_args(p_odds)
    add_common(p_odds)
    p_odds.add_argument("--model", required=True)
    p_odds.add_argument("--variables", default=None, help="comma-separated feature names")
    p_odds.add_argument("--groups", default=None,
                        help="CSV with columns feature,mean_a,mean_b for group odds ratios")
    p_odds.set_defaults(func=cmd_report_odds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataValidationError, BinConstructionError, FoldError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UpliftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
