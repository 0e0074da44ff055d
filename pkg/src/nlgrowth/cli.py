"""Command-line frontend.

Estimation commands (``lgcm``, ``lcsm``, ``tvc``, ``mgm``, ``mediation``,
``gmm``) read a wide CSV, fit the model and write to ``--out``:

* ``params.csv``   name, estimate, se (user-facing parameterisation)
* ``derived.csv``  name, estimate, se (delta method; only for acceptable fits)
* ``fit_stats.csv`` status, -2lnL, logLik, n_params, N, BIC, attempts
* ``fit.json``     self-describing fit file used by the post-fit commands
* ``posteriors.csv`` (``gmm`` only)

Post-fit commands (``lrt``, ``fscores``, ``classify``, ``criteria``) read fit
files.  ``simulate`` writes a dataset plus a ``*.truth.json`` sidecar.

Exit codes: 0 acceptable status, 1 estimation failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import warnings
from typing import Sequence

import numpy as np

from . import exceptions as ex
from . import postfit
from .curves import INTRINSIC_KINDS, FunctionalForm
from .dataset import load_wide_csv, write_wide_csv
from .estimator import FIT_SCHEMA, FitConfig, FitResult, fit
from .model_builder import ModelSpec, parameter_template, spec_to_dict
from .simulate import SimConfig, simulate_with_info

TRUTH_SCHEMA = "nlgrowth.truth/1"
FAMILY_COMMANDS = ("lgcm", "lcsm", "tvc", "mgm", "mediation")
SUB_MODELS = {"lgcm": "lgcm", "lcsm": "lcsm", "tvc": "tvc", "tvcmodel": "tvc", "mgm": "mgm",
              "mediation": "mediation", "med": "mediation"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def parse_records(text: str) -> list[tuple[int, ...]]:
    """``"1:6"`` or ``"1,2,3"``; ``;`` separates the lists of several processes."""
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            if ":" in part:
                a, b = part.split(":")
                rec = tuple(range(int(a), int(b) + 1))
            else:
                rec = tuple(int(x) for x in part.split(","))
        except ValueError:
            raise UsageError(f"cannot parse record list {part!r}") from None
        if not rec:
            raise UsageError(f"empty record list {part!r}")
        out.append(rec)
    if not out:
        raise UsageError("--t-records is empty")
    return out


def _names(text: str | None) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()] if text else []


def _model_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--traj-var", help="outcome variable(s), comma separated")
    g.add_argument("--t-var", default="T", help="time-column prefix(es), comma separated")
    g.add_argument("--t-records", help="wave indices: a:b or a comma list; ';' between processes")
    g.add_argument("--curve-fun", default="linear")
    g.add_argument("--intrinsic", dest="intrinsic", action="store_true", default=True)
    g.add_argument("--no-intrinsic", dest="intrinsic", action="store_false")
    g.add_argument("--add-tic", "--growth-tic", dest="growth_tic", default=None,
                   help="time-invariant covariates on the growth factors, comma separated")
    g.add_argument("--tvc-var")
    g.add_argument("--type", type=int, choices=(0, 1, 2, 3), default=1)
    g.add_argument("--bs-model", default="LGCM", choices=("LGCM", "LCSM"))
    g.add_argument("--no-traj", type=int, default=None)
    g.add_argument("--x-var")
    g.add_argument("--m-var")
    g.add_argument("--y-var")
    g.add_argument("--grp", type=int, default=2)
    g.add_argument("--sub-model", default="lgcm")
    g.add_argument("--cluster-tic", default=None, help="covariates of class membership, comma separated")


def _fit_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("estimation")
    g.add_argument("--data", required=True)
    g.add_argument("--id-column", default=None)
    g.add_argument("--res-scale", type=float, default=0.1)
    g.add_argument("--rand-scale", type=float, default=1.0)
    g.add_argument("--rand-cor", type=float, default=0.3)
    g.add_argument("--joint-cor", type=float, default=0.3)
    g.add_argument("--starts", help="JSON file of name -> value, or a fit file")
    g.add_argument("--tries", type=int, default=None)
    g.add_argument("--jitter-d", default="runif", choices=("runif", "rnorm", "rcauchy"))
    g.add_argument("--loc", type=float, default=1.0)
    g.add_argument("--scale", type=float, default=0.25)
    g.add_argument("--ok-status-code", type=int, nargs="+", default=[0])
    g.add_argument("--max-iterations", type=int, default=500)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nlgrowth", description="Nonlinear longitudinal models by FIML.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in FAMILY_COMMANDS + ("gmm",):
        p = sub.add_parser(name, help=f"fit a {name} model")
        _model_flags(p)
        _fit_flags(p)

    p = sub.add_parser("simulate", help="simulate a dataset from true parameters")
    p.add_argument("--family", required=True, choices=FAMILY_COMMANDS + ("gmm",))
    _model_flags(p)
    p.add_argument("--truth", required=True, help="JSON file of parameter name -> true value")
    p.add_argument("-n", "--n", type=int, required=True)
    p.add_argument("--waves", required=True, help="comma-separated wave times")
    p.add_argument("--jitter-window", type=float, default=0.0)
    p.add_argument("--missing-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("lrt", help="likelihood-ratio test of two nested fits")
    p.add_argument("--full", required=True)
    p.add_argument("--reduced", required=True)
    p.add_argument("--out", default=None, help="optional CSV path")

    for name, what in (("fscores", "factor scores"), ("classify", "posterior class probabilities")):
        p = sub.add_parser(name, help=what)
        p.add_argument("--fit", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--id-column", default=None)
        p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("criteria", help="log-likelihood, parameter count, BIC and class proportions")
    p.add_argument("--fits", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--id-column", default=None)
    p.add_argument("--out", default=None, help="optional CSV path")
    return parser


# ---------------------------------------------------------------------------
# model specification from flags
# ---------------------------------------------------------------------------

def _form(kind: str, intrinsic: bool) -> FunctionalForm:
    base = FunctionalForm(kind)
    return FunctionalForm(base.kind, intrinsic and base.kind in INTRINSIC_KINDS)


def _need(args, *flags):
    for f in flags:
        if getattr(args, f) in (None, ""):
            raise UsageError(f"--{f.replace('_', '-')} is required for this command")


def build_spec(command: str, args) -> ModelSpec:
    """Translate command-line flags into a :class:`ModelSpec`."""
    if command == "gmm":
        if args.grp < 2:
            raise UsageError("grp must be ≥ 2; use the submodel command")
        key = SUB_MODELS.get(args.sub_model.lower())
        if key is None:
            raise UsageError(f"unknown --sub-model {args.sub_model!r}")
        sub = build_spec(key, args)
        return ModelSpec.mixture_of(sub, args.grp, class_tics=_names(args.cluster_tic))
    tics = _names(args.growth_tic)
    t_vars = _names(args.t_var) or ["T"]
    if command == "mediation":
        _need(args, "x_var", "m_var", "y_var", "t_records")
        no_traj = 3 if args.no_traj is None else args.no_traj
        if no_traj not in (2, 3):
            raise UsageError("mediation takes --no-traj 2 (baseline predictor) or 3 (longitudinal predictor)")
        kind = FunctionalForm(args.curve_fun).kind
        if kind not in ("linear", "bilinear_spline"):
            raise UsageError("mediation takes --curve-fun linear or bilinear_spline")
        records = parse_records(args.t_records)
        return ModelSpec.mediation_model(args.x_var, args.m_var, args.y_var, _broadcast(records, no_traj),
                                         kind, x_longitudinal=no_traj == 3,
                                         t_vars=_broadcast(t_vars, no_traj))
    _need(args, "traj_var", "t_records")
    traj = _names(args.traj_var)
    records = parse_records(args.t_records)
    form = _form(args.curve_fun, args.intrinsic)
    if command == "mgm":
        no_traj = 2 if args.no_traj is None else args.no_traj
        if len(traj) != no_traj:
            raise UsageError(f"--no-traj {no_traj} needs {no_traj} names in --traj-var")
        return ModelSpec.mgm(traj, _broadcast(records, no_traj), form, model=args.bs_model,
                             t_vars=_broadcast(t_vars, no_traj), tics=tics)
    if len(traj) != 1:
        raise UsageError(f"{command} takes one --traj-var")
    if command == "lgcm":
        return ModelSpec.lgcm(traj[0], records[0], form, t_var=t_vars[0], tics=tics)
    if command == "lcsm":
        return ModelSpec.lcsm(traj[0], records[0], form, t_var=t_vars[0], tics=tics)
    if command == "tvc":
        _need(args, "tvc_var")
        return ModelSpec.tvc_model(traj[0], records[0], form, args.tvc_var, args.type,
                                   base_model=args.bs_model, t_var=t_vars[0], tics=tics)
    raise UsageError(f"unknown command {command!r}")


def _broadcast(values: list, n: int) -> list:
    if len(values) == 1:
        return values * n
    if len(values) != n:
        raise UsageError(f"expected 1 or {n} entries, got {len(values)}")
    return values


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "NA" if math.isnan(x) else repr(x)


def write_csv(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([c if isinstance(c, str) else _fmt(c) for c in r])


def _load_data(path, spec: ModelSpec, id_column):
    return load_wide_csv(path, spec.roles(), id_column=id_column)


def _read_starts(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if isinstance(d, dict) and d.get("schema") == FIT_SCHEMA:
        return FitResult.from_dict(d).estimates.values()
    if isinstance(d, dict) and d.get("schema") == TRUTH_SCHEMA:
        return dict(d["parameters"])
    if not isinstance(d, dict):
        raise UsageError("--starts must hold a JSON object of name -> value")
    return {k: float(v) for k, v in d.items()}


def _fit_config(args) -> FitConfig:
    try:
        return FitConfig(
            starts=_read_starts(args.starts) if args.starts else None,
            res_scale=args.res_scale, rand_scale=args.rand_scale, rand_cor=args.rand_cor,
            joint_cor=args.joint_cor, tries=args.tries, jitter_d=args.jitter_d, loc=args.loc,
            scale=args.scale, ok_status_codes=tuple(args.ok_status_code),
            max_iterations=args.max_iterations, seed=args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _summary(res: FitResult, label: str) -> str:
    lines = [f"{label}: status {res.status_code} ({res.status_text}), -2lnL {res.minus_two_log_lik:.4f}, "
             f"parameters {res.n_parameters}, N {res.n_individuals}, BIC {res.bic:.4f}"]
    width = max((len(n) for n, _, _ in res.parameter_table()), default=4)
    for name, est, se in res.parameter_table():
        lines.append(f"  {name:<{width}}  {est:12.5f}  {se:10.5f}")
    return "\n".join(lines)


def _write_fit_outputs(res: FitResult, data, out: str) -> None:
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "params.csv"), ("name", "estimate", "se"), res.parameter_table())
    rows = []
    if res.ok and res.vcov_internal is not None:
        rows = [(r.name, r.estimate, r.se) for r in postfit.derived_params(res)]
    write_csv(os.path.join(out, "derived.csv"), ("name", "estimate", "se"), rows)
    write_csv(os.path.join(out, "fit_stats.csv"), ("statistic", "value"), [
        ("status_code", res.status_code), ("minus_two_log_lik", res.minus_two_log_lik),
        ("log_lik", res.log_likelihood), ("n_parameters", res.n_parameters),
        ("n_individuals", res.n_individuals), ("bic", res.bic), ("attempts", len(res.attempts)),
        ("grad_norm", res.grad_norm)])
    res.save(os.path.join(out, "fit.json"))
    if res.spec.family == "mixture":
        _write_posteriors(postfit.posterior_classify(res, data), data, os.path.join(out, "posteriors.csv"))


def _write_posteriors(post, data, path) -> None:
    G = post.probs.shape[1]
    header = ("id",) + tuple(f"p{g}" for g in range(1, G + 1)) + ("class",)
    rows = [(i,) + tuple(p) + (int(c),) for i, p, c in zip(data.ids, post.probs, post.modal)]
    write_csv(path, header, rows)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_fit(args) -> int:
    spec = build_spec(args.command, args)
    data = _load_data(args.data, spec, args.id_column)
    cfg = _fit_config(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ex.AllAttemptsFailed)
        res = fit(spec, data, cfg)
    _write_fit_outputs(res, data, args.out)
    print(_summary(res, args.command))
    if not res.ok:
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        for k, a in enumerate(res.attempts):
            print(f"  attempt {k}: start {a.start_hash} status {a.status_code} "
                  f"-2lnL {a.minus_two_log_lik:.4f} iterations {a.iterations}", file=sys.stderr)
        return 1
    return 0


def _cmd_simulate(args) -> int:
    spec = build_spec(args.family, args)
    with open(args.truth, encoding="utf-8") as fh:
        given = json.load(fh)
    if isinstance(given, dict) and given.get("schema") == TRUTH_SCHEMA:
        given = given["parameters"]
    try:
        waves = np.array([float(x) for x in args.waves.split(",")])
    except ValueError:
        raise UsageError(f"cannot parse --waves {args.waves!r}") from None
    params = parameter_template(spec, float(np.median(waves)))
    unknown = sorted(set(given) - set(params))
    if unknown:
        raise UsageError(f"unknown parameter names in --truth: {', '.join(unknown)}")
    params.update({k: float(v) for k, v in given.items()})
    try:
        cfg = SimConfig(spec, params, args.n, waves, args.jitter_window, args.missing_rate, args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    data, info = simulate_with_info(cfg)
    write_wide_csv(data, args.out)
    side = os.path.splitext(args.out)[0] + ".truth.json"
    with open(side, "w", encoding="utf-8") as fh:
        json.dump({"schema": TRUTH_SCHEMA, "spec": spec_to_dict(spec), "parameters": params.values(),
                   "n": args.n, "waves": waves.tolist(), "jitter_window": args.jitter_window,
                   "missing_rate": args.missing_rate, "seed": args.seed,
                   "truncation_rate": info.truncation_rate}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {data.n_individuals} individuals to {args.out} (truncation rate {info.truncation_rate:.4f})")
    return 0


def _cmd_lrt(args) -> int:
    r = postfit.lrt(FitResult.load(args.full), FitResult.load(args.reduced))
    print(f"LRT statistic {r.statistic:.6f}, df {r.df}, p-value {r.p_value:.6g}")
    if r.note:
        print(f"note: {r.note}")
    if args.out:
        write_csv(args.out, ("statistic", "df", "p_value", "note"), [(r.statistic, r.df, r.p_value, r.note)])
    return 0


def _cmd_fscores(args) -> int:
    res = FitResult.load(args.fit)
    data = _load_data(args.data, res.spec, args.id_column)
    fs = postfit.factor_scores(res, data)
    header = ["id"] + list(fs.names) + [f"se({n})" for n in fs.names]
    se = np.sqrt(np.maximum(np.diagonal(fs.cov, axis1=1, axis2=2), 0.0))
    rows = [[i] + list(s) + list(e) for i, s, e in zip(data.ids, fs.scores, se)]
    if fs.classes is not None:
        header.append("class")
        for r, c in zip(rows, fs.classes):
            r.append(int(c))
    write_csv(args.out, header, rows)
    print(f"wrote factor scores of {data.n_individuals} individuals to {args.out}")
    return 0


def _cmd_classify(args) -> int:
    res = FitResult.load(args.fit)
    if res.spec.family != "mixture":
        raise UsageError("classify needs a mixture fit")
    data = _load_data(args.data, res.spec, args.id_column)
    post = postfit.posterior_classify(res, data)
    _write_posteriors(post, data, args.out)
    props = ", ".join(f"{p:.4f}" for p in post.proportions)
    print(f"posterior class proportions: {props}")
    return 0


def _cmd_criteria(args) -> int:
    fits = [FitResult.load(p) for p in args.fits]
    posts = []
    for res in fits:
        if res.spec.family == "mixture":
            posts.append(postfit.posterior_classify(res, _load_data(args.data, res.spec, args.id_column)))
        else:
            posts.append(None)
    labels = [os.path.splitext(os.path.basename(p))[0] if os.path.basename(p) != "fit.json"
              else os.path.basename(os.path.dirname(os.path.abspath(p))) for p in args.fits]
    rows = postfit.criteria_table(fits, posts, labels)
    best = postfit.best_by_bic(rows)
    for r in rows:
        props = "/".join(f"{p:.3f}" for p in r.proportions)
        mark = " *" if r is best else ""
        print(f"{r.label:<20} logLik {r.log_lik:14.4f}  params {r.n_params:4d}  BIC {r.bic:14.4f}  {props}{mark}")
    if args.out:
        write_csv(args.out, ("model", "log_lik", "n_parameters", "bic", "proportions"),
                  [(r.label, r.log_lik, r.n_params, r.bic, "/".join(_fmt(p) for p in r.proportions))
                   for r in rows])
    return 0


INPUT_ERRORS = (UsageError, ex.MissingColumn, ex.NonMonotoneTimes, ex.OrphanObservation,
                ex.UnknownRole, ex.RoleMismatch, ex.NotNested, ex.DatasetMismatch, ex.MissingShapeParameter,
                ex.IncompleteParameterSet, ex.ClassIndexOutOfRange)
COMMANDS = {"simulate": _cmd_simulate, "lrt": _cmd_lrt, "fscores": _cmd_fscores,
            "classify": _cmd_classify, "criteria": _cmd_criteria}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = COMMANDS.get(args.command, _cmd_fit)
    try:
        return handler(args)
    except INPUT_ERRORS as e:
        print(f"nlgrowth {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except ex.NLGrowthError as e:
        print(f"nlgrowth {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"nlgrowth {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
