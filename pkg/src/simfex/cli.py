"""
Command-line interface for misclassification correction of a categorized covariate.

Subcommands::

    simfex misclass   estimate the error model, pi and p from replicate data
    simfex fit        naive, MCSIMEX* and SIMFEX estimates
    simfex bootstrap  as ``fit`` plus bootstrap SEs, intervals and p-values
    simfex simulate   Monte Carlo study for one configuration
    simfex sweep      Monte Carlo study over several noise-to-signal ratios

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical or
estimation failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import glm
from .error_model import fit_error_params, fit_lambda
from .estimator import (DEFAULT_ETA_GRID, EXTRAPOLANTS, Z_975, bootstrap_inference, simfex_contrast_estimate,
                        simfex_estimate, two_sided_p)
from .exceptions import (ConfigError, DataError, DomainError, EstimationError, EstimationWarning,
                         NumericalError, SimfexError)
from .io import ColumnMapping, ingest, run_metadata, write_output
from .mcsimex import McsimexConfig, mcsimex_estimate
from .misclass import CategoryScheme, estimate_pi_p, estimate_pi_p_by_group, quantile_cutpoints
from .simulate import METHODS, MODELS, SETTINGS, GenConfig, load_defaults, run_study, sensitivity_sweep

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
DATA_COMMANDS = ("misclass", "fit", "bootstrap")
STUDY_COMMANDS = ("simulate", "sweep")


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _name_list(text: str) -> list:
    return [v.strip() for v in text.split(",") if v.strip()]


class _Parser(argparse.ArgumentParser):
    """Reports usage errors as ConfigError so they get the structured exit path."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="simfex", description=__doc__.split("\n\n")[0].strip())
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file whose keys set defaults for any option below")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output path (default: standard output)")
    common.add_argument("--format", choices=("csv", "table"), default="csv")
    common.add_argument("--no-figures", dest="figures", action="store_false",
                        help="skip PNG figures written next to --out")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--eta-grid", type=_float_list, default=list(DEFAULT_ETA_GRID))
    common.add_argument("--extrapolant", choices=sorted(EXTRAPOLANTS), default="quadratic")
    common.add_argument("--methods", type=_name_list, default=list(METHODS))
    common.add_argument("--mcsimex-sims", type=int, default=100, help="pseudo-datasets per eta for MCSIMEX*")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--input", help="delimited UTF-8 file with a header row")
    data.add_argument("--response")
    data.add_argument("--covariate", help="contaminated covariate (default: first replicate column)")
    data.add_argument("--replicates", type=_name_list, help="replicate columns, e.g. w1,w2")
    data.add_argument("--covariates", type=_name_list, default=[], help="precisely measured covariates")
    data.add_argument("--group", help="discrete covariate allowed to correlate with X")
    data.add_argument("--link", choices=glm.LINKS, default="identity")
    data.add_argument("--categories", type=int, help="J, with cutpoints at sample quantiles of the covariate")
    data.add_argument("--cutpoints", type=_float_list, help="explicit cutpoints")
    data.add_argument("--lam", type=float, help="fix the Box-Cox exponent instead of estimating it")

    study = argparse.ArgumentParser(add_help=False)
    study.add_argument("--setting", choices=sorted(SETTINGS), default="normal")
    study.add_argument("--model", choices=sorted(MODELS), default="linear")
    study.add_argument("--nsr", type=float, default=1.0)
    study.add_argument("--categories", type=int, default=3)
    study.add_argument("--n", type=int, default=1000, help="subjects per repetition")
    study.add_argument("--reps", type=int, default=200)
    study.add_argument("--defaults", help="JSON file replacing the shipped default parameters")
    for name in ("mu_lambda_x", "sigma2_lambda_x", "beta0", "beta1", "noise_sd"):
        study.add_argument("--" + name.replace("_", "-"), dest=name, type=float)

    sub.add_parser("misclass", parents=[common, data], help="estimate pi and p")
    sub.add_parser("fit", parents=[common, data], help="point estimates")
    p = sub.add_parser("bootstrap", parents=[common, data], help="point estimates with bootstrap inference")
    for sp in (p,):
        sp.add_argument("--boot", type=int, default=500)
        sp.add_argument("--ci", choices=("normal", "percentile"), default="normal")
        sp.add_argument("--hold-pi", action="store_true", help="reuse the full-data pi in every resample")
    p = sub.add_parser("simulate", parents=[common, study], help="Monte Carlo study")
    p.add_argument("--boot", type=int, default=500, help="SIMFEX bootstrap resamples (0 disables)")
    p = sub.add_parser("sweep", parents=[common, study], help="Monte Carlo study over NSR values")
    p.add_argument("--boot", type=int, default=500, help="SIMFEX bootstrap resamples (0 disables)")
    p.add_argument("--nsr-values", type=_float_list, default=[1.0, 0.8, 0.5, 0.2])
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
        known = set(vars(args))
        unknown = sorted(k for k in overrides if k.replace("-", "_") not in known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in overrides.items()})
        args = parser.parse_args(argv)
    _validate(args)
    return args


def _validate(args) -> None:
    bad = [m for m in args.methods if m not in METHODS]
    if bad or not args.methods:
        raise ConfigError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    if args.command in DATA_COMMANDS:
        if not args.input:
            raise ConfigError("--input is required")
        if not args.replicates or len(args.replicates) < 2:
            raise ConfigError("--replicates needs at least two columns")
        if (args.categories is None) == (args.cutpoints is None):
            raise ConfigError("give exactly one of --categories and --cutpoints")
        if args.command != "misclass" and not args.response:
            raise ConfigError("--response is required")
    if getattr(args, "boot", 0) and args.boot < 50:
        raise ConfigError("--boot must be at least 50" + (" (or 0)" if args.command in STUDY_COMMANDS else ""))


def _semantic_config(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "config"}
    if args.command in DATA_COMMANDS:
        cfg["input"] = hashlib.sha256(Path(args.input).read_bytes()).hexdigest()
    if args.command in STUDY_COMMANDS and args.defaults:
        cfg["defaults"] = load_defaults(args.defaults)
    return cfg


class _Outputs:
    """Tracks files written by a run so they can be removed on failure."""

    def __init__(self, out):
        self.out = Path(out) if out else None
        self.written = []

    def figure(self, name: str) -> Path | None:
        if self.out is None:
            return None
        path = self.out.with_name(f"{self.out.stem}_{name}.png")
        self.written.append(path)
        return path

    def text(self, text: str) -> None:
        if self.out is None:
            sys.stdout.write(text)
            return
        self.written.append(self.out)
        self.out.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.out.with_name(self.out.name + ".part")
        self.written.append(tmp)
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(self.out)

    def cleanup(self) -> None:
        for path in self.written:
            try:
                path.unlink()
            except FileNotFoundError:
                pass


# --- data workflows ----------------------------------------------------------

def _load(args):
    mapping = ColumnMapping(args.response if args.command != "misclass" else None, tuple(args.replicates),
                            args.covariate, tuple(args.covariates), args.group)
    data, reps, report = ingest(args.input, mapping)
    if args.cutpoints is not None:
        try:
            scheme = CategoryScheme(args.cutpoints)
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        if args.categories < 2:
            raise ConfigError("--categories must be at least 2")
        scheme = quantile_cutpoints(data.w, args.categories)
    if data.group is not None:
        levels = np.unique(data.group)
        if levels.size < 2:
            raise DataError(f"group column {args.group!r} has a single level")
        dummies = (data.group[:, None] == levels[None, 1:]).astype(float)
        z = dummies if data.z is None else np.hstack([data.z, dummies])
        data = glm.Dataset(data.y, data.w, z, data.group)
    return data, reps, report, scheme


def _group_models(data, reps, scheme, lam):
    """Per-level error models sharing the pooled Box-Cox exponent."""
    if lam is None:
        lam = fit_lambda(data.w).lam
    pooled = fit_error_params(data.w, reps, lam=lam)
    params = {}
    for level in np.unique(data.group).tolist():
        rows = data.group == level
        params[level] = fit_error_params(data.w[rows], reps[rows], lam=lam)
    return estimate_pi_p_by_group(params, scheme, pooled)


def _misclass_sections(mc, scheme):
    prm = mc.params
    params_rows = [(k, v) for k, v in prm.to_dict().items() if not isinstance(v, (list, tuple))]
    params_rows.append(("out_of_support_mass", mc.out_of_support_mass))
    lower, upper = scheme.bounds()
    J = scheme.n_categories
    cat_rows = [(j + 1, float(lower[j]), float(upper[j]), float(mc.p[j])) for j in range(J)]
    pi_rows = [(j + 1, *map(float, mc.pi[j])) for j in range(J)]
    return [
        ("error_model", ("parameter", "value"), params_rows),
        ("categories", ("category", "lower", "upper", "p"), cat_rows),
        ("pi", ("true_category", *[f"observed_{j + 1}" for j in range(J)]), pi_rows),
    ]


def _theta_names(J):
    return [f"theta_{j + 1}" for j in range(J)]


def cmd_misclass(args, outputs, meta):
    data, reps, report, scheme = _load(args)
    meta["rows_used"] = report.n_used
    meta["rows_dropped"] = report.n_missing
    meta["rows_rejected"] = len(report.rejected_rows)
    sections = []
    if data.group is not None:
        res = _group_models(data, reps, scheme, args.lam)
        mc = res.pooled
        sections += _misclass_sections(mc, scheme)
        sections.append(("group_deviation", ("group", "max_abs_pi_deviation", "max_abs_p_deviation"),
                         [(lv, res.pi_deviation[lv], res.p_deviation[lv]) for lv in res.by_group]))
    else:
        params = fit_error_params(data.w, reps, lam=args.lam)
        mc = estimate_pi_p(params, scheme)
        sections += _misclass_sections(mc, scheme)
    outputs.text(write_output(None, sections, meta, args.format))
    if args.figures and (path := outputs.figure("pi")):
        from .plotting import plot_misclassification

        plot_misclassification(mc.pi, path)


def _named(theta, se, J):
    """``[(name, estimate, se)]`` for each theta_j and theta_J - theta_1."""
    names = _theta_names(J) + [f"theta_{J}-theta_1"]
    return list(zip(names, map(float, theta), map(float, se)))


def _estimates(args, data, reps, scheme):
    """Point estimates for each requested method, keyed by method."""
    J = scheme.n_categories
    c = np.zeros(J)
    c[0], c[-1] = -1.0, 1.0
    est, extra = {}, {}
    naive = glm.fit(data, scheme, args.link)
    if naive.flagged:
        raise EstimationError("naive fit failed: " + "; ".join(naive.messages))
    nse = float(math.sqrt(c @ naive.theta_cov @ c))
    est["naive"] = _named(np.r_[naive.theta, naive.relative_difference], np.r_[naive.se, nse], J)

    if data.group is not None:
        if "mcsimex_star" in args.methods:
            raise ConfigError("MCSIMEX* is not available with --group; pass --methods naive,simfex")
        res = _group_models(data, reps, scheme, args.lam)
        extra["misclass"] = res.pooled
        extra["group"] = res
        if "simfex" in args.methods:
            cr = simfex_contrast_estimate(data, scheme, args.link, res.by_group, args.eta_grid, args.extrapolant)
            extra["contrast"] = cr
            est["simfex"] = [(f"theta_{j + 1}-theta_1", float(v), float("nan"))
                             for j, v in enumerate(cr.contrasts, start=1)]
        return est, extra

    mc = estimate_pi_p(fit_error_params(data.w, reps, lam=args.lam), scheme)
    extra["misclass"] = mc
    if "simfex" in args.methods:
        sf = replace(simfex_estimate(data, scheme, args.link, mc.pi, mc.p, args.eta_grid, args.extrapolant),
                     misclass=mc)
        extra["simfex"] = sf
        est["simfex"] = _named(np.r_[sf.theta_simfex, sf.relative_difference], np.full(J + 1, np.nan), J)
    if "mcsimex_star" in args.methods:
        cfg = McsimexConfig(args.mcsimex_sims, tuple(args.eta_grid), args.extrapolant, args.seed)
        ms = mcsimex_estimate(data, scheme, args.link, mc.pi, cfg, n_jobs=args.jobs)
        est["mcsimex_star"] = _named(np.r_[ms.theta, ms.relative_difference], np.r_[ms.se, ms.rd_se], J)
    return est, extra


def _run_estimation(args, outputs, meta, with_boot: bool):
    data, reps, report, scheme = _load(args)
    meta["rows_used"] = report.n_used
    meta["rows_dropped"] = report.n_missing
    meta["rows_rejected"] = len(report.rejected_rows)
    est, extra = _estimates(args, data, reps, scheme)
    J = scheme.n_categories
    rd_name = f"theta_{J}-theta_1"

    intervals = {}
    if with_boot and "simfex" in est:
        if data.group is not None:
            raise ConfigError("bootstrap with --group is not supported")
        sf = bootstrap_inference(data, reps, scheme, args.link, args.eta_grid, args.extrapolant,
                                 n_resamples=args.boot, seed=args.seed, reestimate_pi=not args.hold_pi,
                                 ci=args.ci, estimate=extra["simfex"], n_jobs=args.jobs)
        extra["simfex"] = sf
        bs = sf.bootstrap
        est["simfex"] = _named(np.r_[sf.theta_simfex, sf.relative_difference], np.r_[bs.se, bs.rd_se], J)
        intervals = {name: ci for name, ci in zip(_theta_names(J) + [rd_name],
                                                 list(zip(bs.ci_lower, bs.ci_upper)) + [bs.rd_ci])}
        meta["bootstrap_resamples"] = bs.n_resamples
        meta["bootstrap_discarded"] = bs.n_discarded

    order = [m for m in METHODS if m in est]
    rows, rd_rows = [], []
    for m in order:
        for name, t, s in est[m]:
            row = [m, name, t, s]
            if with_boot:
                lo, hi = intervals[name] if m == "simfex" else (t - Z_975 * s, t + Z_975 * s)
                row += [float(lo), float(hi)]
            rows.append(tuple(row))
            if name == rd_name:
                rd_rows.append(tuple([m, t, s] + ([two_sided_p(t, s)] if with_boot else [])))
    cols = ("method", "parameter", "estimate", "se") + (("ci_lower", "ci_upper") if with_boot else ())
    rd_cols = ("method", rd_name, "se") + (("p_value",) if with_boot else ())

    sections = [("relative_difference", rd_cols, rd_rows), ("estimates", cols, rows)]
    sections += _misclass_sections(extra["misclass"], scheme)
    if "group" in extra:
        res = extra["group"]
        sections.append(("group_deviation", ("group", "max_abs_pi_deviation", "max_abs_p_deviation"),
                         [(lv, res.pi_deviation[lv], res.p_deviation[lv]) for lv in res.by_group]))
    outputs.text(write_output(None, sections, meta, args.format))

    if args.figures:
        from .plotting import plot_extrapolation, plot_misclassification

        if path := outputs.figure("pi"):
            plot_misclassification(extra["misclass"].pi, path)
        sf = extra.get("simfex")
        if sf is not None and (path := outputs.figure("extrapolation")):
            plot_extrapolation(sf.grid, sf.pseudo_sequence, sf.extrapolant, path,
                               naive=sf.naive.relative_difference, corrected=sf.relative_difference)


def cmd_fit(args, outputs, meta):
    _run_estimation(args, outputs, meta, with_boot=False)


def cmd_bootstrap(args, outputs, meta):
    _run_estimation(args, outputs, meta, with_boot=True)


# --- study workflows ---------------------------------------------------------

def _gen_config(args) -> GenConfig:
    defaults = load_defaults(args.defaults) if args.defaults else None
    overrides = {k: getattr(args, k) for k in ("mu_lambda_x", "sigma2_lambda_x", "beta0", "beta1", "noise_sd")
                 if getattr(args, k) is not None}
    return GenConfig.default(args.setting, args.model, defaults=defaults, nsr=args.nsr, J=args.categories,
                             n=args.n, seed=args.seed, **overrides)


def _study_kwargs(args) -> dict:
    return dict(methods=tuple(args.methods), boot_resamples=args.boot, parallelism=args.jobs,
                grid=tuple(args.eta_grid), kind=args.extrapolant, mcsimex_sims=args.mcsimex_sims)


def cmd_simulate(args, outputs, meta):
    config = _gen_config(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        report = run_study(config, args.reps, **_study_kwargs(args))
    report.meta.update(meta)
    outputs.text(report.to_csv() if args.format == "csv" else _meta_block(meta) + report.to_table())
    if args.figures and (path := outputs.figure("bias")):
        from .plotting import plot_study_bias

        plot_study_bias([report], path)


def _meta_block(meta) -> str:
    return "".join(f"# {k}: {v}\n" for k, v in meta.items()) + "\n"


def cmd_sweep(args, outputs, meta):
    from .simulate import StudyRow, format_tables

    base = _gen_config(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        reports = sensitivity_sweep(base, args.nsr_values, args.reps, **_study_kwargs(args))
    if args.format == "csv":
        rows = [(rep.config["nsr"], rep.n_failed, *[getattr(r, f) for f in StudyRow.FIELDS])
                for rep in reports for r in rep.rows]
        text = write_output(None, [("sweep", ("nsr", "n_failed", *StudyRow.FIELDS), rows)], meta, "csv")
    else:
        text = _meta_block(meta) + format_tables(reports)
    outputs.text(text)
    if args.figures and (path := outputs.figure("bias")):
        from .plotting import plot_study_bias

        plot_study_bias(reports, path)


COMMANDS = {"misclass": cmd_misclass, "fit": cmd_fit, "bootstrap": cmd_bootstrap,
            "simulate": cmd_simulate, "sweep": cmd_sweep}


def _fail(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None) -> int:
    outputs = None
    try:
        args = parse_args(argv)
        meta = run_metadata(_semantic_config(args), args.seed)
        meta["command"] = args.command
        outputs = _Outputs(args.out)
        COMMANDS[args.command](args, outputs, meta)
        return EXIT_OK
    except Exception as exc:
        if isinstance(exc, (ConfigError, DomainError)):
            code = EXIT_CONFIG
        elif isinstance(exc, (DataError, FileNotFoundError)):
            code = EXIT_DATA
        elif isinstance(exc, (EstimationError, NumericalError, SimfexError, np.linalg.LinAlgError)):
            code = EXIT_NUMERICAL
        else:
            raise
        if outputs is not None:
            outputs.cleanup()
        return _fail(code, exc)


if __name__ == "__main__":
    sys.exit(main())
