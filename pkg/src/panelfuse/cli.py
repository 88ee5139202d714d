"""Command-line front end.

Subcommands: estimate, simulate, placebo, sensitivity, bounds.  All
outputs are UTF-8 with deterministic field ordering; rerunning a command
with the same inputs and seed produces byte-identical files.

Exit codes:
  0  success
  2  usage error (bad flags)
  3  input parse error
  4  panel validation failure
  5  solver infeasibility (eta slacks too tight)
  6  precondition error (method requirements not met)
  7  solver non-convergence or internal pipeline failure
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import pandas as pd

from . import io as pfio
from .equi import (
    LogEquiBoundInputs,
    PositivityError,
    SynthBoundInputs,
    bias_bound_log_equi,
    bias_bound_log_equi_refined,
    bias_bound_synth,
    estimate_linear_equi,
    estimate_log_equi,
)
from .fusion import FusionConfig, FusionError, run_fusion, run_sensitivity
from .panel import aggregate, normalize_covariates, validate
from .simlab import (
    DgpConfig,
    METHOD_LINEAR,
    METHOD_LOG,
    METHOD_SYNTH,
    check_equi_assumptions,
    run_bias_experiment,
    run_placebo,
    summarize_bias,
)
from .solver import SolverConfig, SolverError, SolverInfeasible

EXIT_OK = 0
EXIT_PARSE = 3
EXIT_VALIDATION = 4
EXIT_INFEASIBLE = 5
EXIT_PRECONDITION = 6
EXIT_SOLVER = 7

DEFAULTS = {
    "eta_z": 0.1,
    "eta_x": 0.1,
    "budget_step": 0.05,
    "seed": 0,
    "normalize": True,
    "method": "all",
    "permissive": False,
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _fail(message, code):
    raise CliError(message, code)


def _emit_error(message, code, out_dir=None):
    record = {"error": message, "exit_code": code}
    sys.stderr.write(json.dumps(record) + "\n")
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            pfio.write_json(record, Path(out_dir) / "error.json")
        except OSError:
            pass
    return code


def _add_ingest_flags(p):
    p.add_argument("--outcomes", required=True, help="long-format outcomes CSV")
    p.add_argument("--covariates-target", help="target-domain covariates CSV")
    p.add_argument("--covariates-reference", help="reference-domain covariates CSV")
    p.add_argument("--target-unit", required=True, help="label of the treated unit")
    p.add_argument("--permissive", action="store_true", default=None,
                   help="ignore unknown CSV columns")


def _add_fusion_flags(p):
    p.add_argument("--eta-z", type=float, default=None,
                   help="slack on the reference-covariate matching constraint")
    p.add_argument("--eta-x", type=float, default=None,
                   help="slack on the target-covariate matching constraint")
    p.add_argument("--budget-step", type=float, default=None,
                   help="budget simplex grid step (must divide 1)")
    p.add_argument("--no-normalize", dest="normalize", action="store_false",
                   default=None, help="disable covariate min-max normalization")


def _add_common_flags(p):
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--seed", type=int, default=None)


def _effective(args) -> dict:
    """Defaults < config file < explicit CLI flags."""
    eff = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            eff.update(json.loads(Path(config_path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            _fail(f"cannot read config {config_path}: {exc}", EXIT_PARSE)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            eff[key] = val
    return eff


def _fusion_config(eff) -> FusionConfig:
    try:
        return FusionConfig(
            eta_Z=float(eff["eta_z"]),
            eta_X=float(eff["eta_x"]),
            budget_grid_step=float(eff["budget_step"]),
            solver=SolverConfig(),
            normalize_covariates=bool(eff["normalize"]),
        )
    except ValueError as exc:
        _fail(str(exc), EXIT_PARSE)


def _load(args, eff) -> pfio.PanelBundle:
    try:
        bundle = pfio.load_panel(
            args.outcomes, args.target_unit,
            covariates_target=args.covariates_target,
            covariates_reference=args.covariates_reference,
            permissive=bool(eff["permissive"]),
        )
    except pfio.IngestError as exc:
        _fail(str(exc), EXIT_PARSE)
    report = validate(bundle.dataset)
    if not report.passed:
        msgs = "; ".join(m for _, ok, m in report.checks if not ok)
        _fail(f"panel validation failed: {msgs}", EXIT_VALIDATION)
    return bundle


def _manifest(args, eff, command) -> dict:
    return {
        "command": command,
        "inputs": {
            "outcomes": getattr(args, "outcomes", None),
            "covariates_target": getattr(args, "covariates_target", None),
            "covariates_reference": getattr(args, "covariates_reference", None),
            "target_unit": getattr(args, "target_unit", None),
        },
        "effective_config": {k: eff[k] for k in sorted(eff)},
    }


def cmd_estimate(args) -> int:
    eff = _effective(args)
    bundle = _load(args, eff)
    fusion_cfg = _fusion_config(eff)
    method = eff["method"]
    methods = ([METHOD_LINEAR, METHOD_LOG, METHOD_SYNTH]
               if method == "all" else [method])
    if not set(methods) <= {METHOD_LINEAR, METHOD_LOG, METHOD_SYNTH}:
        _fail(f"unknown method {method!r}", EXIT_PARSE)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {"manifest": _manifest(args, eff, "estimate"), "methods": {}}
    agg = aggregate(bundle.dataset)

    for m in methods:
        if m == METHOD_LINEAR:
            est = estimate_linear_equi(agg)
            report["methods"][m] = {
                "psi_hat": est.psi_hat,
                "psi_hat_percent": 100.0 * est.psi_hat,
                "components": est.components,
            }
        elif m == METHOD_LOG:
            try:
                est = estimate_log_equi(agg)
            except PositivityError as exc:
                _fail(str(exc), EXIT_PRECONDITION)
            report["methods"][m] = {
                "psi_hat": est.psi_hat,
                "psi_hat_percent": 100.0 * est.psi_hat,
                "components": est.components,
            }
        else:
            try:
                res = run_fusion(bundle.dataset, fusion_cfg)
            except SolverInfeasible as exc:
                _fail(str(exc), EXIT_INFEASIBLE)
            except (SolverError, FusionError) as exc:
                _fail(str(exc), EXIT_SOLVER)
            entry = pfio.fusion_report(res)
            entry["psi_hat_percent"] = 100.0 * res.psi_hat_sc
            norm = normalize_covariates(bundle.dataset,
                                        fusion_cfg.normalize_covariates)
            entry["covariate_balance"] = pfio.covariate_balance(bundle, res, norm)
            report["methods"][m] = entry
            pfio.write_gaps_csv(res, out / "gaps.csv")

    pfio.write_json(report, out / "report.json")
    return EXIT_OK


def cmd_simulate(args) -> int:
    eff = _effective(args)
    fusion_cfg = _fusion_config(eff)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = DgpConfig(T=max(args.t_grid), J=args.J, S=args.S,
                        master_seed=int(eff["seed"]),
                        intercept_horizon=max(100, max(args.t_grid)))
    except ValueError as exc:
        _fail(str(exc), EXIT_PARSE)

    if args.experiment == "bias":
        methods = args.methods.split(",")
        table = run_bias_experiment(cfg, args.t_grid, args.M, methods,
                                    fusion_cfg=fusion_cfg)
        table.to_csv(out / "bias_experiment.csv", index=False)
        summary = summarize_bias(table)
        summary.to_csv(out / "bias_summary.csv", index=False)
        pfio.write_json(
            {"manifest": _manifest(args, eff, "simulate"),
             "rows": len(table),
             "summary": summary.to_dict(orient="records")},
            out / "summary.json")
    else:
        rep = check_equi_assumptions(cfg, generator=args.generator,
                                     n_replicates=args.M)
        pts = rep["points"]
        pd.DataFrame(
            [(k, v) for k, v in pts.items()], columns=["point", "value"]
        ).to_csv(out / "equi_points.csv", index=False)
        pfio.write_json({"manifest": _manifest(args, eff, "simulate"), **rep},
                        out / "equi_check.json")
    return EXIT_OK


def cmd_placebo(args) -> int:
    eff = _effective(args)
    bundle = _load(args, eff)
    fusion_cfg = _fusion_config(eff)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = run_placebo(bundle.dataset, fusion_cfg)
    except ValueError as exc:
        _fail(str(exc), EXIT_PRECONDITION)
    except SolverInfeasible as exc:
        _fail(str(exc), EXIT_INFEASIBLE)

    pd.DataFrame(list(result.rows)).to_csv(out / "placebo_units.csv", index=False)
    rows = []
    for domain, gaps in (("target", result.gap_target),
                         ("reference", result.gap_reference)):
        for unit, series in gaps.items():
            for t, v in enumerate(series, start=1):
                rows.append((domain, unit, t, float(v)))
    pd.DataFrame(rows, columns=["domain", "unit", "time", "gap"]).to_csv(
        out / "placebo_gaps.csv", index=False)
    pfio.write_json(
        {"manifest": _manifest(args, eff, "placebo"),
         "target_rank": result.target_rank, "n_runs": result.n_runs},
        out / "placebo_summary.json")
    return EXIT_OK


def _parse_eta_grid(spec: str):
    """'0.05,0.1' -> square grid; '0.05:0.1,0.2:0.3' -> explicit pairs."""
    spec = spec.strip()
    if ":" in spec:
        return [tuple(float(x) for x in pair.split(":")) for pair in spec.split(",")]
    vals = [float(x) for x in spec.split(",")]
    return [(a, b) for a in vals for b in vals]


def cmd_sensitivity(args) -> int:
    eff = _effective(args)
    bundle = _load(args, eff)
    fusion_cfg = _fusion_config(eff)
    try:
        grid = _parse_eta_grid(args.eta_grid)
    except ValueError:
        _fail(f"cannot parse eta grid {args.eta_grid!r}", EXIT_PARSE)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_sensitivity(bundle.dataset, fusion_cfg, grid)
    pd.DataFrame(rows).to_csv(out / "sensitivity.csv", index=False)
    pfio.write_json({"manifest": _manifest(args, eff, "sensitivity"),
                     "rows": rows}, out / "sensitivity.json")
    return EXIT_OK


def _parse_kv(pairs):
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ValueError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k] = float(v)
    return out


def cmd_bounds(args) -> int:
    try:
        kv = _parse_kv(args.set or [])
        if args.kind == "synth":
            inputs = SynthBoundInputs(
                theta_bar=kv["theta_bar"],
                theta_tilde_bar=kv.get("theta_tilde_bar", 0.0),
                vartheta_bar=kv["vartheta_bar"],
                vartheta_tilde_bar=kv.get("vartheta_tilde_bar", 1.0),
                sigma_bar=kv["sigma_bar"], tau=kv.get("tau", 0.0),
                xi_lower=kv["xi_lower"], T=int(kv["T"]), J=int(kv["J"]))
            value = bias_bound_synth(inputs)
        else:
            inputs = LogEquiBoundInputs(
                L_y=kv["L_y"], l_y=kv.get("l_y", kv["L_y"]),
                L_f=kv["L_f"], l_f=kv["l_f"],
                tau_J=kv.get("tau_J", 0.0), C_J=kv.get("C_J", 0.0),
                J=int(kv["J"]), tau1_J=kv.get("tau1_J"))
            value = (bias_bound_log_equi(inputs) if args.kind == "log-eq"
                     else bias_bound_log_equi_refined(inputs))
    except KeyError as exc:
        _fail(f"missing bound parameter {exc}", EXIT_PARSE)
    except ValueError as exc:
        _fail(str(exc), EXIT_PARSE)
    record = {"kind": args.kind, "inputs": _parse_kv(args.set or []),
              "bound": value}
    sys.stdout.write(json.dumps(record, indent=2) + "\n")
    if args.out is not None:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        pfio.write_json(record, outdir / "bounds.json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panelfuse",
        description="Treatment-effect estimation from two-domain panel data "
                    "with no pre-intervention period.",
        epilog=__doc__.split("Exit codes:")[1].join(["Exit codes:", ""]),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate treatment effects from CSVs")
    _add_ingest_flags(p)
    _add_fusion_flags(p)
    _add_common_flags(p)
    p.add_argument("--method", default=None,
                   choices=[METHOD_LINEAR, METHOD_LOG, METHOD_SYNTH, "all"])
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="run simulation experiments")
    _add_fusion_flags(p)
    _add_common_flags(p)
    p.add_argument("--experiment", default="bias", choices=["bias", "equi-check"])
    p.add_argument("--generator", default="factor",
                   choices=["factor", "example31", "scaled"])
    p.add_argument("--t-grid", dest="t_grid", default="10,20,30,40,50,60,70,80,90,100",
                   type=lambda s: [int(x) for x in s.split(",")])
    p.add_argument("--M", type=int, default=300, help="replicates per grid point")
    p.add_argument("--J", type=int, default=30)
    p.add_argument("--S", type=int, default=5)
    p.add_argument("--methods", default="linear-eq,log-eq,synth")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("placebo", help="placebo test over pseudo-targets")
    _add_ingest_flags(p)
    _add_fusion_flags(p)
    _add_common_flags(p)
    p.set_defaults(func=cmd_placebo)

    p = sub.add_parser("sensitivity", help="eta-grid sensitivity sweep")
    _add_ingest_flags(p)
    _add_fusion_flags(p)
    _add_common_flags(p)
    p.add_argument("--eta-grid", required=True,
                   help="comma list (square grid) or colon pairs a:b,c:d")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("bounds", help="evaluate closed-form bias bounds")
    p.add_argument("--kind", required=True,
                   choices=["log-eq", "log-eq-refined", "synth"])
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="bound parameter, repeatable")
    p.add_argument("--out", default=None, help="also write bounds.json here")
    p.set_defaults(func=cmd_bounds)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        return _emit_error(str(exc), exc.code, getattr(args, "out", None))


if __name__ == "__main__":
    sys.exit(main())
