"""
Simulation-free extrapolation (SIMFEX) for categorized mismeasured covariates.

Given the naive coefficients ``theta_naive`` and an estimated
misclassification matrix ``pi`` with category probabilities ``p``, the
pseudo-estimates

    theta_naive(eta) = A(pi ** eta, p) @ theta_naive

are computed deterministically on a grid of ``eta >= 0``. A polynomial in
``eta`` is fitted to each component and evaluated at ``eta = -1``, the point
corresponding to no misclassification.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from . import glm
from ._parallel import chunk_ranges, ordered_map
from .error_model import validate_replicates
from .exceptions import DomainError, EstimationError, EstimationWarning, SimfexError
from .misclass import CategoryScheme, MisclassResult, estimate_misclassification
from .stochastic_matrix import check_probabilities, check_stochastic, fractional_power, naive_map_matrix

__all__ = [
    "DEFAULT_ETA_GRID",
    "EXTRAPOLANTS",
    "Extrapolant",
    "SimfexResult",
    "ContrastResult",
    "BootstrapSummary",
    "check_grid",
    "naive_map",
    "pseudo_sequence",
    "fit_extrapolant",
    "extrapolate_naive",
    "simfex_estimate",
    "contrast_map",
    "simfex_contrast_estimate",
    "fit_simfex",
    "bootstrap_inference",
]

DEFAULT_ETA_GRID = (0.5, 1.0, 1.5, 2.0)
EXTRAPOLANTS = {"linear": 2, "quadratic": 3}
Z_975 = 1.959963984540054
MAX_DISCARD_FRACTION = 0.2


def check_grid(grid, kind: str = "quadratic") -> np.ndarray:
    """Validate an eta grid: strictly increasing, non-negative, long enough for ``kind``."""
    if kind not in EXTRAPOLANTS:
        raise DomainError(f"unknown extrapolant {kind!r}; expected one of {sorted(EXTRAPOLANTS)}")
    g = np.asarray(grid, dtype=float).ravel()
    if g.size < EXTRAPOLANTS[kind]:
        raise DomainError(f"{kind} extrapolation needs at least {EXTRAPOLANTS[kind]} grid points")
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise DomainError("eta grid values must be finite and non-negative")
    if np.any(np.diff(g) <= 0):
        raise DomainError("eta grid must be strictly increasing")
    return g


@dataclass(frozen=True)
class Extrapolant:
    """Per-component polynomial in ``eta``.

    ``gamma[j]`` holds the coefficients of component ``j`` in increasing
    powers of ``eta``.
    """

    kind: str
    gamma: np.ndarray

    def __call__(self, eta):
        eta = np.asarray(eta, dtype=float)
        powers = eta[..., None] ** np.arange(self.gamma.shape[1])
        return powers @ self.gamma.T


def naive_map(pi, p, theta) -> np.ndarray:
    """Naive coefficients implied by true coefficients ``theta``: ``A(pi, p) @ theta``."""
    return naive_map_matrix(pi, p) @ np.asarray(theta, dtype=float)


def _powers(pi, grid):
    return [fractional_power(pi, eta) for eta in grid]


def pseudo_sequence(pi, p, theta_naive, grid) -> np.ndarray:
    """``K x J`` matrix whose row ``k`` is ``A(pi ** grid[k], p) @ theta_naive``."""
    theta_naive = np.asarray(theta_naive, dtype=float)
    return np.vstack([naive_map(res.matrix, p, theta_naive) for res in _powers(pi, grid)])


def fit_extrapolant(grid, sequence, kind: str = "quadratic") -> Extrapolant:
    """Least-squares polynomial fit of each column of ``sequence`` on ``grid``."""
    g = check_grid(grid, kind)
    seq = np.asarray(sequence, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    if seq.shape[0] != g.size:
        raise DomainError("sequence must have one row per grid value")
    vander = g[:, None] ** np.arange(EXTRAPOLANTS[kind])
    coef, _, rank, _ = np.linalg.lstsq(vander, seq, rcond=None)
    if rank < vander.shape[1]:
        raise DomainError("eta grid is rank deficient for this extrapolant")
    return Extrapolant(kind, coef.T.copy())


def extrapolate_naive(theta_naive, pi, p, grid=DEFAULT_ETA_GRID, kind: str = "quadratic"):
    """Run the simulation-free and extrapolation steps on a naive estimate.

    Returns ``(theta_simfex, sequence, extrapolant, max_clip_mass)``.
    """
    g = check_grid(grid, kind)
    pi = check_stochastic(pi, tol=1e-8)
    p = check_probabilities(p, tol=1e-8)
    theta_naive = np.asarray(theta_naive, dtype=float)
    powers = _powers(pi, g)
    seq = np.vstack([naive_map(r.matrix, p, theta_naive) for r in powers])
    ext = fit_extrapolant(g, seq, kind)
    clip = max(r.clip_mass for r in powers)
    return ext(-1.0), seq, ext, clip


@dataclass(frozen=True)
class BootstrapSummary:
    """Bootstrap standard errors and 95% intervals for a SIMFEX estimate.

    ``estimates`` holds the retained resample estimates (one row each).
    Relative-difference quantities refer to ``theta[J-1] - theta[0]``.
    """

    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    rd_se: float
    rd_ci: tuple[float, float]
    n_resamples: int
    n_discarded: int
    estimates: np.ndarray = field(repr=False)
    ci_method: str = "normal"
    reestimate_pi: bool = True

    def rd_p_value(self, estimate: float) -> float:
        """Two-sided normal-approximation p-value for ``theta_J - theta_1 = 0``."""
        return two_sided_p(estimate, self.rd_se)


def two_sided_p(estimate: float, se: float) -> float:
    if not se > 0:
        return float("nan")
    return float(math.erfc(abs(estimate / se) / math.sqrt(2.0)))


@dataclass(frozen=True)
class SimfexResult:
    """Output of the SIMFEX procedure."""

    theta_simfex: np.ndarray
    relative_difference: float
    pseudo_sequence: np.ndarray
    extrapolant: Extrapolant
    grid: np.ndarray
    naive: glm.FitResult
    max_clip_mass: float = 0.0
    misclass: MisclassResult | None = None
    bootstrap: BootstrapSummary | None = None

    @property
    def contrasts(self) -> np.ndarray:
        """``theta[j] - theta[0]`` for ``j = 1..J-1``."""
        return self.theta_simfex[1:] - self.theta_simfex[0]


def simfex_estimate(data: glm.Dataset, scheme: CategoryScheme, link: str, pi, p,
                    grid=DEFAULT_ETA_GRID, kind: str = "quadratic") -> SimfexResult:
    """Fit the naive model and correct it by simulation-free extrapolation.

    Parameters
    ----------
    data : Dataset
        Response, mismeasured covariate and optional covariates.
    scheme : CategoryScheme
        Categories used for the indicators.
    link : {'identity', 'logit', 'probit'}
    pi, p : array_like
        Misclassification matrix (rows: true category) and true-category
        probabilities, usually from :func:`simfex.misclass.estimate_pi_p`.
    grid : sequence of float
        Values of ``eta`` for the pseudo-estimates.
    kind : {'quadratic', 'linear'}
        Extrapolation polynomial.
    """
    naive = glm.fit(data, scheme, link)
    theta, seq, ext, clip = extrapolate_naive(naive.theta, pi, p, grid, kind)
    theta = np.asarray(theta, dtype=float)
    return SimfexResult(theta, float(theta[-1] - theta[0]), seq, ext,
                        np.asarray(grid, dtype=float), naive, clip)


def contrast_map(pi, p, theta_tilde) -> np.ndarray:
    """Naive contrasts ``theta_naive[j] - theta_naive[0]`` implied by true contrasts.

    ``theta_tilde[j-1] = theta[j] - theta[0]``; the result has the same length.
    """
    a = naive_map_matrix(pi, p)
    full = np.r_[0.0, np.asarray(theta_tilde, dtype=float)]
    mapped = a @ full
    return mapped[1:] - mapped[0]


@dataclass(frozen=True)
class ContrastResult:
    """SIMFEX estimates of ``theta[j] - theta[0]`` allowing ``pi`` to vary with a discrete covariate."""

    contrasts: np.ndarray
    pseudo_sequence: np.ndarray
    extrapolant: Extrapolant
    naive_contrasts: np.ndarray
    weights: dict
    naive: glm.FitResult

    @property
    def relative_difference(self) -> float:
        return float(self.contrasts[-1])


def simfex_contrast_estimate(data: glm.Dataset, scheme: CategoryScheme, link: str,
                             group_models: Mapping, grid=DEFAULT_ETA_GRID,
                             kind: str = "quadratic") -> ContrastResult:
    """Contrast version of SIMFEX for a discrete covariate correlated with ``X``.

    ``group_models`` maps each level of ``data.group`` to ``(pi, p)`` (or a
    :class:`MisclassResult`). Per-level pseudo-sequences of the contrast map
    are averaged with weights equal to the level frequencies in ``data``,
    then extrapolated to ``eta = -1``. Without group labels a single model
    is required and gets weight one.
    """
    if not group_models:
        raise EstimationError("no group models supplied")
    g = check_grid(grid, kind)
    naive = glm.fit(data, scheme, link)
    tilde = naive.theta[1:] - naive.theta[0]

    if data.group is None:
        if len(group_models) != 1:
            raise EstimationError("data has no group labels but several group models were given")
        weights = {next(iter(group_models)): 1.0}
    else:
        levels, counts = np.unique(data.group, return_counts=True)
        missing = [lv for lv in levels.tolist() if lv not in group_models]
        if missing:
            raise EstimationError(f"no misclassification model for group levels {missing}")
        weights = {lv: c / data.n for lv, c in zip(levels.tolist(), counts)}

    seq = np.zeros((g.size, tilde.size))
    for level, wt in weights.items():
        pi, p = group_models[level]
        pi = check_stochastic(pi, tol=1e-8)
        for k, eta in enumerate(g):
            seq[k] += wt * contrast_map(fractional_power(pi, eta).matrix, p, tilde)
    ext = fit_extrapolant(g, seq, kind)
    return ContrastResult(np.asarray(ext(-1.0)), seq, ext, tilde, weights, naive)


def fit_simfex(data: glm.Dataset, replicates, scheme: CategoryScheme, link: str,
               grid=DEFAULT_ETA_GRID, kind: str = "quadratic", lam: float | None = None) -> SimfexResult:
    """Estimate ``pi`` and ``p`` from the data, then run :func:`simfex_estimate`."""
    mc = estimate_misclassification(data.w, replicates, scheme, lam=lam)
    res = simfex_estimate(data, scheme, link, mc.pi, mc.p, grid, kind)
    return replace(res, misclass=mc)


def _resample_estimates(job):
    (data, reps, scheme, link, grid, kind, seed, indices, fixed) = job
    n, n0 = data.n, reps.shape[0]
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        for b in indices:
            rng = np.random.default_rng([seed, b])
            idx = rng.integers(0, n, n)
            ridx = rng.integers(0, n0, n0)
            boot = data.take(idx)
            try:
                if fixed is None:
                    pi, p = estimate_misclassification(boot.w, reps[ridx], scheme)
                else:
                    pi, p = fixed
                res = simfex_estimate(boot, scheme, link, pi, p, grid, kind)
            except SimfexError:
                out.append(None)
                continue
            out.append(None if res.naive.flagged else res.theta_simfex)
    return out


def bootstrap_inference(data: glm.Dataset, replicates, scheme: CategoryScheme, link: str,
                        grid=DEFAULT_ETA_GRID, kind: str = "quadratic", n_resamples: int = 500,
                        seed: int = 0, *, reestimate_pi: bool = True, ci: str = "normal",
                        estimate: SimfexResult | None = None, n_jobs: int = 1) -> SimfexResult:
    """Bootstrap standard errors for SIMFEX.

    Each resample draws primary rows and replicate subjects independently
    with replacement, re-estimates ``pi`` and ``p`` (unless
    ``reestimate_pi`` is False, in which case the full-data estimates are
    reused) and reruns SIMFEX. Resample ``b`` uses its own generator seeded
    by ``(seed, b)``, so results do not depend on ``n_jobs``.

    Resamples whose naive fit is flagged, or that fail (empty category,
    degenerate error model), are discarded and counted.

    Returns
    -------
    SimfexResult
        The full-data estimate with ``bootstrap`` filled in.

    Raises
    ------
    EstimationError
        If more than 20% of resamples are discarded.
    """
    if n_resamples < 50:
        raise DomainError("use at least 50 bootstrap resamples")
    if ci not in ("normal", "percentile"):
        raise DomainError("ci must be 'normal' or 'percentile'")
    reps = validate_replicates(replicates)
    check_grid(grid, kind)
    if estimate is None:
        estimate = fit_simfex(data, reps, scheme, link, grid, kind)
    elif estimate.misclass is None and not reestimate_pi:
        raise DomainError("holding pi fixed needs an estimate carrying its misclassification result")
    fixed = None if reestimate_pi else (estimate.misclass.pi, estimate.misclass.p)

    jobs = [(data, reps, scheme, link, tuple(grid), kind, int(seed), r, fixed)
            for r in chunk_ranges(n_resamples, max(1, n_jobs))]
    draws = [est for chunk in ordered_map(_resample_estimates, jobs, n_jobs) for est in chunk]
    kept = np.array([d for d in draws if d is not None])
    n_discarded = len(draws) - len(kept)
    if n_discarded > MAX_DISCARD_FRACTION * n_resamples:
        raise EstimationError(f"{n_discarded} of {n_resamples} bootstrap resamples failed")

    theta = estimate.theta_simfex
    se = kept.std(axis=0, ddof=1)
    rd = kept[:, -1] - kept[:, 0]
    rd_se = float(rd.std(ddof=1))
    if ci == "normal":
        lo, hi = theta - Z_975 * se, theta + Z_975 * se
        rd_ci = (estimate.relative_difference - Z_975 * rd_se, estimate.relative_difference + Z_975 * rd_se)
    else:
        lo, hi = np.percentile(kept, [2.5, 97.5], axis=0)
        q = np.percentile(rd, [2.5, 97.5])
        rd_ci = (float(q[0]), float(q[1]))
    summary = BootstrapSummary(se, lo, hi, rd_se, rd_ci, n_resamples, n_discarded, kept, ci, reestimate_pi)
    return replace(estimate, bootstrap=summary)
