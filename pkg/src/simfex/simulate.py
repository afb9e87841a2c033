"""
Data generation and Monte Carlo study harness.

Three distributions of the true covariate are available, each Box-Cox
normal with its own exponent: ``normal`` (1.0), ``right_skewed`` (0.26) and
``heavy_tailed`` (0.95). The observed covariate adds normal error on the
transformed scale, with the error variance chosen so that the noise-to-signal
ratio ``(var W - var X) / var X`` on the original scale hits its target.
Responses follow a linear, logistic or probit model in ``X``.

The parameter values shipped in ``data/defaults.json`` are stand-ins chosen
for this package; they are not taken from any published table.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import optimize, special

from . import glm
from ._parallel import chunk_ranges, ordered_map
from .error_model import in_support, inverse_box_cox
from .estimator import DEFAULT_ETA_GRID, Z_975, bootstrap_inference, simfex_estimate
from .exceptions import ConfigError, EstimationError, EstimationWarning, SimfexError
from .mcsimex import McsimexConfig, mcsimex_estimate
from .misclass import CategoryScheme, estimate_misclassification, normal_quantile_cutpoints

__all__ = [
    "SETTINGS",
    "MODELS",
    "METHODS",
    "GenConfig",
    "SimulatedData",
    "StudyRow",
    "StudyReport",
    "load_defaults",
    "sigma2_u_for_nsr",
    "true_theta",
    "generate",
    "targets_for",
    "run_study",
    "sensitivity_sweep",
    "format_tables",
]

SETTINGS = {"normal": 1.0, "right_skewed": 0.26, "heavy_tailed": 0.95}
SETTING_LABELS = {"normal": "I", "right_skewed": "II", "heavy_tailed": "III"}
MODELS = {"linear": "identity", "logistic": "logit", "probit": "probit"}
METHODS = ("naive", "mcsimex_star", "simfex")

ORACLE_DRAWS = 10_000_000
ORACLE_SEED = 20240601
NSR_DRAWS = 1_000_000
NSR_SEED = 7
MAX_REJECTION = 0.01
MAX_FAILED_FRACTION = 0.05


@functools.lru_cache(maxsize=None)
def load_defaults(path: str | None = None) -> dict:
    """Shipped (or user supplied) default parameters, keyed by setting."""
    if path is None:
        text = resources.files("simfex").joinpath("data/defaults.json").read_text()
    else:
        text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse config file: {exc}") from exc


@dataclass(frozen=True)
class GenConfig:
    """Configuration of one simulation cell."""

    setting: str = "normal"
    model: str = "linear"
    mu_lambda_x: float = 10.0
    sigma2_lambda_x: float = 4.0
    nsr: float = 1.0
    beta0: float = 0.0
    beta1: float = 1.0
    noise_sd: float = 0.75
    n: int = 1000
    J: int = 3
    R: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigError(f"unknown setting {self.setting!r}; expected one of {sorted(SETTINGS)}")
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; expected one of {sorted(MODELS)}")
        if not self.sigma2_lambda_x > 0:
            raise ConfigError("sigma2_lambda_x must be positive")
        if not self.nsr >= 0:
            raise ConfigError("nsr must be non-negative")
        if self.J < 2 or self.n < 2 * self.J or self.R < 2:
            raise ConfigError("need J >= 2, n >= 2J and R >= 2")

    @property
    def lam(self) -> float:
        return SETTINGS[self.setting]

    @property
    def link(self) -> str:
        return MODELS[self.model]

    @property
    def label(self) -> str:
        return SETTING_LABELS[self.setting]

    @classmethod
    def default(cls, setting: str = "normal", model: str = "linear", defaults: dict | None = None,
                **overrides) -> "GenConfig":
        """Config built from the shipped defaults, with keyword overrides."""
        table = defaults if defaults is not None else load_defaults()
        if setting not in table.get("settings", {}):
            raise ConfigError(f"no defaults for setting {setting!r}")
        entry = table["settings"][setting]
        if model not in entry.get("models", {}):
            raise ConfigError(f"no defaults for model {model!r} in setting {setting!r}")
        kw = dict(setting=setting, model=model,
                  mu_lambda_x=entry["mu_lambda_x"], sigma2_lambda_x=entry["sigma2_lambda_x"],
                  noise_sd=table.get("noise_sd", 0.75))
        kw.update(entry["models"][model])
        kw.update(overrides)
        return cls(**kw)

    def scheme(self) -> CategoryScheme:
        """Cutpoints at the exact ``1/J`` quantiles of ``X``."""
        return normal_quantile_cutpoints(self.lam, self.mu_lambda_x, math.sqrt(self.sigma2_lambda_x), self.J)

    def to_dict(self) -> dict:
        return asdict(self)


def _nsr_at(sigma_u, lam, t, v, mask_x):
    tw = t + sigma_u * v
    ok = mask_x & in_support(tw, lam)
    x = inverse_box_cox(t[ok], lam)
    w = inverse_box_cox(tw[ok], lam)
    return float(w.var() / x.var() - 1.0)


@functools.lru_cache(maxsize=None)
def sigma2_u_for_nsr(lam: float, mu_lambda_x: float, sigma2_lambda_x: float, nsr: float,
                     n_draws: int = NSR_DRAWS, seed: int = NSR_SEED) -> float:
    """Transformed-scale error variance giving original-scale ``nsr``.

    Exact (``nsr * sigma2_lambda_x``) when ``lam == 1``. Otherwise found by
    bracketed root finding on a variance ratio estimated from ``n_draws`` fixed draws
    (common random numbers make the ratio monotone in the error scale).
    """
    if nsr == 0:
        return 0.0
    if lam == 1.0:
        return nsr * sigma2_lambda_x
    rng = np.random.default_rng(seed)
    sx = math.sqrt(sigma2_lambda_x)
    t = mu_lambda_x + sx * rng.standard_normal(n_draws)
    v = rng.standard_normal(n_draws)
    mask_x = in_support(t, lam)
    lo, hi = 0.0, sx * math.sqrt(nsr)
    while _nsr_at(hi, lam, t, v, mask_x) < nsr:
        hi *= 2.0
        if hi > 1e3 * sx:
            raise ConfigError(f"cannot reach NSR {nsr} for this setting")
    su = optimize.brentq(lambda s: _nsr_at(s, lam, t, v, mask_x) - nsr, lo, hi, xtol=1e-6 * hi)
    achieved = _nsr_at(su, lam, t, v, mask_x)
    if abs(achieved - nsr) > 0.01 * nsr:
        raise ConfigError(f"NSR calibration reached {achieved:.4f} for target {nsr}")
    return su * su


def _conditional_mean(x, config: GenConfig):
    eta = config.beta0 + config.beta1 * x
    if config.model == "linear":
        return eta
    if config.model == "logistic":
        return special.expit(eta)
    return special.ndtr(eta)


@functools.lru_cache(maxsize=64)
def _oracle(config_key: tuple, n_draws: int, seed: int):
    config = GenConfig(**dict(config_key))
    scheme = config.scheme()
    J = config.J
    sums = np.zeros(J)
    sq = np.zeros(J)
    counts = np.zeros(J)
    rng = np.random.default_rng(seed)
    sx = math.sqrt(config.sigma2_lambda_x)
    chunk = 1_000_000
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        t = config.mu_lambda_x + sx * rng.standard_normal(m)
        t = t[in_support(t, config.lam)]
        x = inverse_box_cox(t, config.lam)
        cats = np.searchsorted(np.asarray(scheme.cutpoints), x, side="right")
        cm = _conditional_mean(x, config)
        sums += np.bincount(cats, weights=cm, minlength=J)
        sq += np.bincount(cats, weights=cm * cm, minlength=J)
        counts += np.bincount(cats, minlength=J)
        done += m
    mean = sums / counts
    var = np.maximum(sq / counts - mean ** 2, 0.0)
    se_mean = np.sqrt(var / counts)
    theta = np.asarray(glm.link_function(mean, config.link))
    if config.model == "linear":
        deriv = np.ones(J)
    elif config.model == "logistic":
        deriv = 1.0 / (mean * (1.0 - mean))
    else:
        deriv = 1.0 / (np.exp(-0.5 * theta ** 2) / math.sqrt(2 * math.pi))
    return theta, deriv * se_mean


def _oracle_key(config: GenConfig) -> tuple:
    # fields that do not affect E(Y | X in C_j)
    d = config.to_dict()
    for k in ("nsr", "noise_sd", "n", "R", "seed"):
        d.pop(k)
    return tuple(sorted(d.items()))


def true_theta(config: GenConfig, n_draws: int = ORACLE_DRAWS, seed: int = ORACLE_SEED,
               return_se: bool = False):
    """Target coefficients ``theta_j = g(E[Y | X in C_j])`` by Monte Carlo.

    Uses ``n_draws`` draws of ``X`` and averages the conditional mean of
    ``Y`` given ``X`` within each category. Results are cached per
    configuration and seed.
    """
    theta, se = _oracle(_oracle_key(config), int(n_draws), int(seed))
    if return_se:
        return theta.copy(), se.copy()
    return theta.copy()


@dataclass(frozen=True)
class SimulatedData:
    x: np.ndarray
    w: np.ndarray
    replicates: np.ndarray
    y: np.ndarray
    scheme: CategoryScheme
    sigma2_u: float
    n_rejected: int = 0

    @property
    def dataset(self) -> glm.Dataset:
        return glm.Dataset(self.y, self.w)


def generate(config: GenConfig, rng: np.random.Generator) -> SimulatedData:
    """Draw one dataset.

    Subjects whose true or replicate values fall outside the Box-Cox range
    are redrawn. The primary covariate ``w`` is the first replicate.

    Raises
    ------
    ConfigError
        If more than 1% of subject draws had to be rejected.
    """
    lam, n, R = config.lam, config.n, config.R
    s2u = sigma2_u_for_nsr(lam, config.mu_lambda_x, config.sigma2_lambda_x, config.nsr)
    sx, su = math.sqrt(config.sigma2_lambda_x), math.sqrt(s2u)
    t = np.empty(n)
    tw = np.empty((n, R))
    todo = np.arange(n)
    drawn = rejected = 0
    while todo.size:
        m = todo.size
        tt = config.mu_lambda_x + sx * rng.standard_normal(m)
        ww = tt[:, None] + su * rng.standard_normal((m, R))
        ok = in_support(tt, lam) & np.all(in_support(ww, lam), axis=1)
        t[todo[ok]] = tt[ok]
        tw[todo[ok]] = ww[ok]
        drawn += m
        rejected += int((~ok).sum())
        todo = todo[~ok]
        if rejected > MAX_REJECTION * max(drawn, n):
            raise ConfigError(f"rejected {rejected} of {drawn} draws outside the Box-Cox range")
    x = inverse_box_cox(t, lam)
    reps = inverse_box_cox(tw, lam)
    cm = _conditional_mean(x, config)
    if config.model == "linear":
        y = cm + config.noise_sd * rng.standard_normal(n)
    else:
        y = (rng.random(n) < cm).astype(float)
    return SimulatedData(x, reps[:, 0].copy(), reps, y, config.scheme(), s2u, rejected)


def targets_for(J: int):
    """Names and ``(n_targets, J)`` coefficient matrix of the reported targets.

    Targets are each ``theta_j`` followed by ``theta_J - theta_1`` and, for
    ``J = 5``, the contrasts ``5-3``, ``4-2`` and ``3-1`` (1-based names).
    """
    names = [f"theta_{j + 1}" for j in range(J)]
    rows = list(np.eye(J))
    pairs = [(J, 1)]
    if J == 5:
        pairs += [(5, 3), (4, 2), (3, 1)]
    for hi, lo in pairs:
        c = np.zeros(J)
        c[hi - 1], c[lo - 1] = 1.0, -1.0
        names.append(f"theta_{hi}-theta_{lo}")
        rows.append(c)
    return names, np.vstack(rows)


def _sub_seed(*keys) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def _run_reps(job):
    config, reps, methods, boot, grid, kind, n_sim = job
    _, T = targets_for(config.J)
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        for rep in reps:
            out.append(_one_rep(config, rep, methods, boot, grid, kind, n_sim, T))
    return out


def _one_rep(config, rep, methods, boot, grid, kind, n_sim, T):
    rng = np.random.default_rng([config.seed, rep])
    try:
        sim = generate(config, rng)
        data = sim.dataset
        res = {}
        naive = glm.fit(data, sim.scheme, config.link)
        if naive.flagged:
            return None
        if "naive" in methods:
            cov = naive.theta_cov
            res["naive"] = (T @ naive.theta, np.sqrt(np.einsum("ij,jk,ik->i", T, cov, T)))
        if "simfex" in methods or "mcsimex_star" in methods:
            mc = estimate_misclassification(sim.w, sim.replicates, sim.scheme)
        if "simfex" in methods:
            sf = simfex_estimate(data, sim.scheme, config.link, mc.pi, mc.p, grid, kind)
            se = np.full(T.shape[0], np.nan)
            if boot:
                sf = bootstrap_inference(data, sim.replicates, sim.scheme, config.link, grid, kind,
                                         n_resamples=boot, seed=_sub_seed(config.seed, rep, 1),
                                         estimate=replace(sf, misclass=mc))
                se = (sf.bootstrap.estimates @ T.T).std(axis=0, ddof=1)
            res["simfex"] = (T @ sf.theta_simfex, se)
        if "mcsimex_star" in methods:
            mcfg = McsimexConfig(n_sim=n_sim, grid=tuple(grid), kind=kind, seed=_sub_seed(config.seed, rep, 2))
            ms = mcsimex_estimate(data, sim.scheme, config.link, mc.pi, mcfg)
            v = np.einsum("ij,jk,ik->i", T, ms.cov, T)
            res["mcsimex_star"] = (T @ ms.theta, np.sqrt(np.where(v >= 0, v, np.nan)))
        return res
    except SimfexError:
        return None


@dataclass(frozen=True)
class StudyRow:
    method: str
    target: str
    truth: float
    bias: float
    sd: float
    se: float
    rmse: float
    coverage: float
    mcse: float
    n_used: int

    FIELDS = ("method", "target", "truth", "bias", "sd", "se", "rmse", "coverage", "mcse", "n_used")


@dataclass
class StudyReport:
    """Monte Carlo summary for one configuration.

    One row per (method, target): average bias, empirical SD of the
    estimates, average estimated standard error, RMSE, coverage of the
    nominal 95% interval and the Monte Carlo standard error of the bias.
    """

    config: dict
    rows: list
    n_reps: int
    n_failed: int
    runtime_s: float = 0.0
    meta: dict = field(default_factory=dict)

    def row(self, method: str, target: str) -> StudyRow:
        for r in self.rows:
            if r.method == method and r.target == target:
                return r
        raise KeyError((method, target))

    @property
    def primary_target(self) -> str:
        J = int(self.config["J"])
        return f"theta_{J}-theta_1"

    def to_csv(self, path=None) -> str:
        """Write (or return) the report as CSV with ``#`` metadata lines."""
        buf = io.StringIO()
        header = {"config": self.config, "n_reps": self.n_reps, "n_failed": self.n_failed,
                  "runtime_s": self.runtime_s, **self.meta}
        for k, v in header.items():
            buf.write(f"# {k}: {json.dumps(v, sort_keys=True)}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(StudyRow.FIELDS)
        for r in self.rows:
            wr.writerow([_fmt(getattr(r, f)) for f in StudyRow.FIELDS])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "StudyReport":
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        meta, body = {}, []
        for line in text.splitlines():
            if line.startswith("# "):
                k, _, v = line[2:].partition(": ")
                meta[k] = json.loads(v)
            elif line:
                body.append(line)
        rows = []
        for rec in csv.DictReader(body):
            rows.append(StudyRow(
                rec["method"], rec["target"],
                *(float(rec[f]) for f in StudyRow.FIELDS[2:-1]),
                int(rec["n_used"]),
            ))
        config = meta.pop("config")
        n_reps = meta.pop("n_reps")
        n_failed = meta.pop("n_failed")
        runtime = meta.pop("runtime_s", 0.0)
        return cls(config, rows, n_reps, n_failed, runtime, meta)

    def to_table(self) -> str:
        return format_tables([self])


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _summarise(method, names, truth_t, est, se) -> list:
    rows = []
    n_used = est.shape[0]
    for i, name in enumerate(names):
        e = est[:, i]
        err = e - truth_t[i]
        bias = float(err.mean())
        rmse = float(math.sqrt(np.mean(err ** 2)))
        sd = float(e.std(ddof=1)) if n_used > 1 else float("nan")
        s = se[:, i]
        ok = np.isfinite(s)
        mean_se = float(s[ok].mean()) if ok.any() else float("nan")
        cover = float(np.mean(np.abs(err[ok]) <= Z_975 * s[ok])) if ok.any() else float("nan")
        rows.append(StudyRow(method, name, float(truth_t[i]), bias, sd, mean_se, rmse, cover,
                             sd / math.sqrt(n_used) if n_used > 1 else float("nan"), n_used))
    return rows


def run_study(config: GenConfig, n_reps: int, methods=("naive", "simfex"), boot_resamples: int = 0,
              parallelism: int = 1, grid=DEFAULT_ETA_GRID, kind: str = "quadratic",
              mcsimex_sims: int = 100, min_reps: int = 50) -> StudyReport:
    """Monte Carlo study of the requested methods for one configuration.

    Repetition ``r`` draws from a generator seeded by ``(config.seed, r)``
    and repetitions are reduced in index order, so the report does not
    depend on ``parallelism``. A repetition in which any method fails is
    excluded and counted; more than 5% failures raises.

    ``boot_resamples = 0`` skips the SIMFEX bootstrap, leaving its standard
    error and coverage undefined.
    """
    unknown = set(methods) - set(METHODS)
    methods = tuple(m for m in METHODS if m in set(methods))
    if not methods or unknown:
        raise ConfigError(f"methods must be drawn from {METHODS}")
    if n_reps < min_reps:
        raise ConfigError(f"n_reps must be at least {min_reps}")
    if boot_resamples and boot_resamples < 50:
        raise ConfigError("boot_resamples must be 0 or at least 50")
    names, T = targets_for(config.J)
    truth = true_theta(config)
    truth_t = T @ truth

    start = time.perf_counter()
    jobs = [(config, r, methods, boot_resamples, tuple(grid), kind, mcsimex_sims)
            for r in chunk_ranges(n_reps, max(1, parallelism) * 4 if parallelism > 1 else 1)]
    results = [res for chunk in ordered_map(_run_reps, jobs, parallelism) for res in chunk]
    runtime = time.perf_counter() - start

    ok = [r for r in results if r is not None]
    n_failed = len(results) - len(ok)
    if n_failed > MAX_FAILED_FRACTION * n_reps:
        raise EstimationError(f"{n_failed} of {n_reps} repetitions failed")
    rows = []
    for m in methods:
        est = np.vstack([r[m][0] for r in ok])
        se = np.vstack([r[m][1] for r in ok])
        rows.extend(_summarise(m, names, truth_t, est, se))
    meta = {"methods": list(methods), "boot_resamples": boot_resamples, "eta_grid": list(map(float, grid)),
            "extrapolant": kind, "mcsimex_sims": mcsimex_sims,
            "true_theta": [float(v) for v in truth]}
    return StudyReport(config.to_dict(), rows, n_reps, n_failed, runtime, meta)


def sensitivity_sweep(base: GenConfig, nsr_values, n_reps: int, **kwargs) -> list:
    """:func:`run_study` at each noise-to-signal ratio in ``nsr_values``."""
    values = list(nsr_values)
    if not values:
        raise ConfigError("nsr_values is empty")
    return [run_study(replace(base, nsr=float(v)), n_reps, **kwargs) for v in values]


def format_tables(reports, target: str | None = None) -> str:
    """Aligned text tables of bias/RMSE and SE/coverage, one line per report.

    ``target`` defaults to each report's ``theta_J - theta_1``.
    """
    reports = list(reports)
    if not reports:
        return ""
    methods = [m for m in METHODS if any(r.method == m for rep in reports for r in rep.rows)]
    lines = []
    head = ["Model", "Setting", "NSR", "J", "Target"]

    def block(title, left, right):
        cols = head + [f"{left}:{m}" for m in methods] + [f"{right}:{m}" for m in methods]
        table = [cols]
        for rep in reports:
            c = rep.config
            tgt = target or rep.primary_target
            row = [c["model"], SETTING_LABELS.get(c["setting"], c["setting"]), f"{c['nsr']:g}", str(c["J"]), tgt]
            for stat in (left, right):
                for m in methods:
                    try:
                        v = getattr(rep.row(m, tgt), stat)
                    except KeyError:
                        v = float("nan")
                    row.append("-" if not math.isfinite(v) else f"{v:.3f}")
            table.append(row)
        widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
        out = [title]
        for r in table:
            out.append("  ".join(v.rjust(wd) for v, wd in zip(r, widths)))
        return out

    lines += block("Point estimates", "bias", "rmse")
    lines.append("")
    lines += block("Variance estimates", "se", "coverage")
    return "\n".join(lines) + "\n"
