"""Command-line front end.

Subcommands: ``estimate`` (fit estimators to a summary-statistics file),
``bias-diagnose`` (attenuation moments and predicted IVW bias),
``mediate`` (proportion mediated from fits or precomputed effects), and
``simulate`` (Monte Carlo grids, optionally the mediation study).

Exit codes: 0 success, 2 input/schema error, 3 estimation failure,
4 internal error.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from itertools import product

import numpy as np
from scipy.stats import norm

from . import io as mio
from .bias import diagnose
from .data import SummaryDataset, apply_trait_correlation, validate
from .errors import EstimationError, InputError
from .ivw import fit_ivw, fit_ivw_univariable
from .mediation import proportion_from_effects, proportion_mediated
from .mle import MleOptions, fit_mle
from .simulation import (
    METHODS,
    ScenarioSpec,
    _seed_for,
    run_mediation_study,
    run_monte_carlo,
)

_Z = float(norm.ppf(0.975))


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in str(text).split(",") if tok.strip() != ""]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from err


def _add_output_options(p):
    p.add_argument("--format", choices=("tsv", "json"), default="tsv",
                   help="output format (default tsv)")
    p.add_argument("--output", metavar="PATH", help="write output here instead of stdout")


def _add_mle_options(p):
    p.add_argument("--tolerance", type=float, default=1e-8,
                   help="MLE convergence threshold on the profile log-likelihood change")
    p.add_argument("--max-iterations", type=int, default=1000)
    p.add_argument("--n-starts", type=int, default=5,
                   help="number of random MLE initializations")


def _add_method_flags(p):
    p.add_argument("--ivw", action="store_true", help="inverse-variance weighted fit")
    p.add_argument("--mle", action="store_true",
                   help="measurement-error-aware maximum likelihood fit")
    p.add_argument("--mle-cor", action="store_true",
                   help="MLE with trait correlation filling the sigma_x off-diagonals")
    p.add_argument("--random-effects", action="store_true",
                   help="inflate IVW standard errors by max(1, RSS/(J-K))")


def _selected_methods(args, default=("ivw",)):
    chosen = [m for m, on in (("ivw", args.ivw), ("mle", args.mle), ("mle_cor", args.mle_cor)) if on]
    return tuple(chosen) if chosen else tuple(default)


def _emit(args, text: str):
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_validated(path) -> SummaryDataset:
    ds = mio.read_summary_dataset(path)
    validate(ds).raise_on_failure()
    return ds


def _mle_options(args) -> MleOptions:
    return MleOptions(tolerance=args.tolerance, max_iterations=args.max_iterations,
                      n_starts=args.n_starts, seed=args.seed)


def _estimate_rows(est, exposures):
    rows = []
    for k, name in enumerate(exposures):
        theta = float(est.theta[k])
        se = float(est.se[k])
        z = theta / se if se > 0 else float("inf")
        rows.append({
            "method": est.method.value,
            "exposure": name,
            "estimate": theta,
            "se": se,
            "ci_lower": theta - _Z * se,
            "ci_upper": theta + _Z * se,
            "p_value": 2.0 * float(norm.sf(abs(z))),
            "converged": bool(est.converged),
            "iterations": int(est.iterations),
        })
    return rows


_ESTIMATE_COLUMNS = ["method", "exposure", "estimate", "se", "ci_lower", "ci_upper",
                     "p_value", "converged", "iterations"]
_TSV_FORMATS = {"p_value": ".5e"}


def cmd_estimate(args) -> int:
    ds = _load_validated(args.summary_file)
    methods = _selected_methods(args)
    if "mle_cor" in methods and not args.trait_corr:
        raise InputError("--mle-cor requires --trait-corr FILE")
    ds_cor = None
    if args.trait_corr:
        ds_cor = apply_trait_correlation(ds, mio.read_trait_correlation(args.trait_corr))
    exposures = [f"x{k + 1}" for k in range(ds.n_exposures)]
    opts = _mle_options(args)
    rows = []
    for method in methods:
        if method == "ivw":
            est = fit_ivw(ds, random_effects=args.random_effects)
        elif method == "mle":
            est = fit_mle(ds, opts)
        else:
            est = fit_mle(ds_cor, opts)
        rows.extend(_estimate_rows(est, exposures))
    if args.format == "json":
        _emit(args, mio.format_json("estimate", rows))
    else:
        _emit(args, mio.format_tsv(_ESTIMATE_COLUMNS, rows, _TSV_FORMATS))
    return 0


def cmd_bias_diagnose(args) -> int:
    ds = _load_validated(args.summary_file)
    theta = None
    if args.theta is not None:
        theta = np.asarray(args.theta)
        if theta.shape != (2,):
            raise InputError("--theta expects two comma-separated values")
    diag = diagnose(ds, theta)
    row = {
        "v_x_star1": float(diag.v_x_star[0]),
        "v_x_star2": float(diag.v_x_star[1]),
        "c_x_star": diag.c_x_star,
        "v_zeta1": float(diag.v_zeta[0]),
        "v_zeta2": float(diag.v_zeta[1]),
        "lambda1": float(diag.attenuation[0]),
        "lambda2": float(diag.attenuation[1]),
        "rho_star": diag.rho_star,
    }
    if diag.predicted_bias is not None:
        row["theta1"], row["theta2"] = (float(t) for t in theta)
        row["predicted_bias1"] = float(diag.predicted_bias[0])
        row["predicted_bias2"] = float(diag.predicted_bias[1])
    if args.format == "json":
        _emit(args, mio.format_json("bias-diagnose", [row]))
    else:
        _emit(args, mio.format_tsv(list(row), [row]))
    return 0


def _parse_exposure(name: str, n_exposures: int) -> int:
    token = name.lower().lstrip("x")
    if not token.isdigit() or not 1 <= int(token) <= n_exposures:
        raise InputError(f"exposure {name!r} absent from the multivariable file "
                         f"(expected x1..x{n_exposures})")
    return int(token) - 1


def cmd_mediate(args) -> int:
    if args.effects and (args.uni or args.multi or args.exposure):
        raise InputError("--effects cannot be combined with --uni/--multi/--exposure")
    if not args.effects and not (args.uni and args.multi and args.exposure):
        raise InputError("mediate needs either --effects FILE or all of "
                         "--uni FILE --multi FILE --exposure NAME")
    if args.effects:
        effects = mio.read_effects_table(args.effects)
        (theta_uv, se_uv), (theta_mv, se_mv) = effects["total"], effects["direct"]
        result = proportion_from_effects(theta_mv, se_mv, theta_uv, se_uv)
        method = "effects-file"
    else:
        uni = _load_validated(args.uni)
        if uni.n_exposures != 1:
            raise InputError("the univariable file must contain exactly one exposure")
        multi = _load_validated(args.multi)
        index = _parse_exposure(args.exposure, multi.n_exposures)
        method = args.method
        opts = _mle_options(args)
        if method == "ivw":
            uni_est = fit_ivw_univariable(uni, 0, random_effects=args.random_effects)
            multi_est = fit_ivw(multi, random_effects=args.random_effects)
        else:
            if method == "mle_cor":
                if not args.trait_corr:
                    raise InputError("--method mle_cor requires --trait-corr FILE")
                multi = apply_trait_correlation(multi, mio.read_trait_correlation(args.trait_corr))
            uni_est = fit_mle(uni, opts)
            multi_est = fit_mle(multi, opts)
        result = proportion_mediated(uni_est, multi_est, index)
    row = {
        "method": method,
        "total_effect": result.total_effect,
        "total_se": result.total_se,
        "direct_effect": result.direct_effect,
        "direct_se": result.direct_se,
        "proportion_mediated": result.proportion_mediated,
        "se_proportion": result.se_proportion,
        "ci_lower": result.ci[0],
        "ci_upper": result.ci[1],
    }
    if args.format == "json":
        _emit(args, mio.format_json("mediate", [row]))
    else:
        _emit(args, mio.format_tsv(list(row), [row]))
    return 0


_SIM_COLUMNS = ["rho", "sigma_zeta1_sq", "sigma_zeta2_sq", "method",
                "theta1_median", "theta1_sd", "theta1_coverage", "theta1_rejection",
                "theta2_median", "theta2_sd", "theta2_coverage", "theta2_rejection",
                "replications", "n_nonconverged", "n_failed", "prevalence"]

_MEDIATION_COLUMNS = ["theta1", "sigma_zeta1_sq", "sigma_zeta2_sq", "method",
                      "median_proportion", "true_proportion", "replications", "n_failed"]


def _simulate_grid(args, methods, mle_opts) -> tuple[list[dict], list[dict]]:
    rows, raw_rows = [], []
    cells = list(product(args.rho, args.sigma_zeta1_sq))
    for cell_index, (rho, sz1) in enumerate(cells):
        seed = _seed_for(args.seed, cell_index) if len(cells) > 1 else args.seed
        if args.scenario:
            spec = ScenarioSpec.scenario(args.scenario, rho, sz1, binary=args.binary,
                                         n=args.n, n_variants=args.n_variants, seed=seed)
        else:
            if args.theta1 is None or args.theta2 is None:
                raise InputError("--theta1 and --theta2 are required without --scenario")
            spec = ScenarioSpec(theta=(args.theta1, args.theta2), rho=rho,
                                sigma_zeta_sq=(sz1, args.sigma_zeta2_sq[0]),
                                outcome="binary" if args.binary else "continuous",
                                theta0=args.theta0, n=args.n,
                                n_variants=args.n_variants, seed=seed)
        summary = run_monte_carlo(spec, methods, args.reps, workers=args.workers,
                                  mle_options=mle_opts, random_effects=args.random_effects,
                                  keep_raw=args.emit_raw is not None)
        for perf in summary.performances:
            rows.append({
                "rho": rho, "sigma_zeta1_sq": sz1,
                "sigma_zeta2_sq": spec.sigma_zeta_sq[1], "method": perf.method,
                "theta1_median": float(perf.median[0]), "theta1_sd": float(perf.sd[0]),
                "theta1_coverage": float(perf.coverage[0]),
                "theta1_rejection": float(perf.rejection[0]),
                "theta2_median": float(perf.median[1]), "theta2_sd": float(perf.sd[1]),
                "theta2_coverage": float(perf.coverage[1]),
                "theta2_rejection": float(perf.rejection[1]),
                "replications": summary.replications,
                "n_nonconverged": perf.n_nonconverged, "n_failed": perf.n_failed,
                "prevalence": summary.prevalence,
            })
        if summary.raw is not None:
            for method, data in summary.raw.items():
                for rep in range(summary.replications):
                    raw_rows.append({
                        "rep": rep, "rho": rho, "sigma_zeta1_sq": sz1, "method": method,
                        "theta1": data["theta"][rep, 0], "theta2": data["theta"][rep, 1],
                        "se1": data["se"][rep, 0], "se2": data["se"][rep, 1],
                        "converged": bool(data["converged"][rep]),
                    })
    return rows, raw_rows


def _simulate_mediation(args, methods, mle_opts) -> list[dict]:
    theta1 = args.theta1 if args.theta1 is not None else 0.1
    result = run_mediation_study(
        args.reps, methods=methods, theta1_values=(theta1,),
        sigma_zeta1_sq_values=tuple(args.sigma_zeta1_sq),
        sigma_zeta2_sq_values=tuple(args.sigma_zeta2_sq),
        theta2=args.theta2 if args.theta2 is not None else 0.2,
        rho=args.rho[0], n=args.n, n_variants=args.n_variants,
        n_univariable=args.n_univariable, seed=args.seed, workers=args.workers,
        mle_options=mle_opts, random_effects=args.random_effects)
    return [{
        "theta1": c.theta1, "sigma_zeta1_sq": c.sigma_zeta1_sq,
        "sigma_zeta2_sq": c.sigma_zeta2_sq, "method": c.method,
        "median_proportion": c.median_proportion, "true_proportion": c.true_proportion,
        "replications": result.replications, "n_failed": c.n_failed,
    } for c in result.cells]


def cmd_simulate(args) -> int:
    methods = _selected_methods(args, default=METHODS)
    mle_opts = MleOptions(tolerance=args.tolerance, max_iterations=args.max_iterations,
                          n_starts=args.n_starts)
    if args.mediation:
        rows = _simulate_mediation(args, methods, mle_opts)
        columns, raw_rows = _MEDIATION_COLUMNS, []
    else:
        rows, raw_rows = _simulate_grid(args, methods, mle_opts)
        columns = _SIM_COLUMNS
    if args.emit_raw and raw_rows:
        header = list(raw_rows[0])
        lines = [",".join(header)]
        lines += [",".join(mio.format_cell(r[c], ".17g") for c in header) for r in raw_rows]
        with open(args.emit_raw, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    if args.format == "json":
        _emit(args, mio.format_json("simulate", rows))
    else:
        _emit(args, mio.format_tsv(columns, rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvmr-me",
        description="Multivariable Mendelian randomization with measurement-error "
                    "correction from GWAS summary statistics.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("estimate", help="fit causal-effect estimators to a summary file")
    p.add_argument("summary_file")
    p.add_argument("--trait-corr", metavar="FILE",
                   help="K x K trait correlation TSV for sigma_x off-diagonals")
    _add_method_flags(p)
    _add_mle_options(p)
    p.add_argument("--seed", type=int, default=0, help="seed for MLE initialization draws")
    _add_output_options(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("bias-diagnose",
                       help="attenuation moments and predicted IVW bias (two exposures)")
    p.add_argument("summary_file")
    p.add_argument("--theta", type=_float_list, metavar="T1,T2",
                   help="causal effects at which to predict the asymptotic IVW bias")
    _add_output_options(p)
    p.set_defaults(func=cmd_bias_diagnose)

    p = sub.add_parser("mediate", help="proportion of a total effect that is mediated")
    p.add_argument("--effects", metavar="FILE",
                   help="precomputed effects TSV (effect/estimate/ci_lower/ci_upper)")
    p.add_argument("--uni", metavar="FILE", help="single-exposure instrument summary file")
    p.add_argument("--multi", metavar="FILE", help="multivariable instrument summary file")
    p.add_argument("--exposure", metavar="NAME", help="exposure of interest, e.g. x1")
    p.add_argument("--method", choices=METHODS, default="ivw")
    p.add_argument("--trait-corr", metavar="FILE")
    p.add_argument("--random-effects", action="store_true")
    _add_mle_options(p)
    p.add_argument("--seed", type=int, default=0)
    _add_output_options(p)
    p.set_defaults(func=cmd_mediate)

    p = sub.add_parser("simulate", help="Monte Carlo evaluation of the estimators")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--scenario", choices=("S1", "S2", "S3"),
                   help="named scenario; otherwise give --theta1/--theta2")
    p.add_argument("--binary", action="store_true", help="binary outcome")
    p.add_argument("--rho", type=_float_list, default=[0.0],
                   help="comma-separated grid of exposure-1-on-exposure-2 effects")
    p.add_argument("--sigma-zeta1-sq", type=_float_list, default=[0.0],
                   help="comma-separated grid of measurement-error variances on X1")
    p.add_argument("--sigma-zeta2-sq", type=_float_list, default=[0.0],
                   help="measurement-error variance on X2 (grid in --mediation mode)")
    p.add_argument("--theta1", type=float)
    p.add_argument("--theta2", type=float)
    p.add_argument("--theta0", type=float, default=-4.0,
                   help="binary-outcome intercept on the log-odds scale")
    p.add_argument("--n", type=int, default=20_000, help="individuals per sample")
    p.add_argument("--n-variants", type=int, default=40)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--mediation", action="store_true",
                   help="run the mediation study over the --sigma-zeta2-sq grid")
    p.add_argument("--n-univariable", type=int, default=10,
                   help="variants reserved as univariable instruments in --mediation mode")
    _add_method_flags(p)
    _add_mle_options(p)
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: MVMR_ME_WORKERS or 1)")
    p.add_argument("--emit-raw", metavar="PATH",
                   help="write per-replication estimates as CSV")
    _add_output_options(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except EstimationError as err:
        print(f"estimation failed: {err}", file=sys.stderr)
        return 3
    except Exception:  # pragma: no cover - defensive
        traceback.print_exc()
        return 4


if __name__ == "__main__":
    sys.exit(main())
