"""
Misclassification SIMEX (MCSIMEX) with a plug-in misclassification matrix.

Observed categories are pushed through ``pi ** eta`` by simulation, the naive
model is refitted on each pseudo-dataset, the averages are extrapolated to
``eta = -1``, and the variance is estimated by the simulation-extrapolation
jackknife: the averaged naive covariance minus the between-simulation
covariance, extrapolated the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import glm
from ._parallel import ordered_map
from .estimator import DEFAULT_ETA_GRID, Extrapolant, check_grid, fit_extrapolant
from .exceptions import DomainError, EstimationError
from .misclass import CategoryScheme, categorize
from .stochastic_matrix import check_stochastic, fractional_power

__all__ = ["McsimexConfig", "McsimexResult", "misclassify", "mcsimex_estimate"]

MAX_REDRAWS = 10


@dataclass(frozen=True)
class McsimexConfig:
    n_sim: int = 100
    grid: tuple[float, ...] = DEFAULT_ETA_GRID
    kind: str = "quadratic"
    seed: int = 0

    def __post_init__(self):
        if self.n_sim < 1:
            raise DomainError("n_sim must be at least 1")
        check_grid(self.grid, self.kind)


@dataclass(frozen=True)
class McsimexResult:
    theta: np.ndarray
    cov: np.ndarray
    pseudo_sequence: np.ndarray
    extrapolant: Extrapolant
    naive: glm.FitResult
    n_redraws: int = 0

    @property
    def se(self) -> np.ndarray:
        d = np.diag(self.cov)
        return np.sqrt(np.where(d >= 0, d, np.nan))

    @property
    def relative_difference(self) -> float:
        return float(self.theta[-1] - self.theta[0])

    def contrast_se(self, c) -> float:
        """Jackknife standard error of ``c @ theta``."""
        c = np.asarray(c, dtype=float)
        v = float(c @ self.cov @ c)
        return float(np.sqrt(v)) if v >= 0 else float("nan")

    @property
    def rd_se(self) -> float:
        c = np.zeros(self.theta.size)
        c[0], c[-1] = -1.0, 1.0
        return self.contrast_se(c)


def misclassify(categories, pi_eta, rng: np.random.Generator) -> np.ndarray:
    """Redraw each category ``j`` from row ``j`` of ``pi_eta``, independently."""
    cats = np.asarray(categories, dtype=np.intp)
    cum = np.cumsum(np.asarray(pi_eta, dtype=float), axis=1)
    cum[:, -1] = 1.0
    u = rng.random(cats.size)
    return (u[:, None] >= cum[cats]).sum(axis=1)


def _simulate_eta(job):
    y, cats, J, z, link, pi_eta, seed, k, n_sim = job
    thetas = np.empty((n_sim, J))
    covs = np.empty((n_sim, J, J))
    redraws = 0
    for b in range(n_sim):
        rng = np.random.default_rng([seed, k, b])
        for _ in range(MAX_REDRAWS + 1):
            new = misclassify(cats, pi_eta, rng)
            if np.bincount(new, minlength=J).min() > 0:
                break
            redraws += 1
        else:
            raise EstimationError(f"pseudo-dataset kept an empty category after {MAX_REDRAWS} redraws")
        res = glm.fit_categories(y, new, J, z, link)
        thetas[b] = res.theta
        covs[b] = res.theta_cov
    return thetas, covs, redraws


def mcsimex_estimate(data: glm.Dataset, scheme: CategoryScheme, link: str, pi,
                     config: McsimexConfig = McsimexConfig(), n_jobs: int = 1) -> McsimexResult:
    """MCSIMEX estimate of ``theta`` with jackknife covariance.

    Pseudo-dataset ``b`` at grid point ``k`` uses a generator seeded by
    ``(config.seed, k, b)``; a pseudo-dataset with an empty category is redrawn
    (at most 10 times).
    """
    pi = check_stochastic(pi, tol=1e-8)
    J = scheme.n_categories
    if pi.shape != (J, J):
        raise DomainError("pi does not match the number of categories")
    grid = check_grid(config.grid, config.kind)
    cats = np.atleast_1d(categorize(data.w, scheme))
    naive = glm.fit_categories(data.y, cats, J, data.z, link)

    jobs = [(data.y, cats, J, data.z, link, fractional_power(pi, eta, clip=True).matrix, config.seed, k, config.n_sim)
            for k, eta in enumerate(grid)]
    sims = ordered_map(_simulate_eta, jobs, n_jobs)

    seq = np.vstack([t.mean(axis=0) for t, _, _ in sims])
    ext = fit_extrapolant(grid, seq, config.kind)
    theta = np.asarray(ext(-1.0))

    # jackknife variance: mean naive covariance minus between-simulation covariance
    tau = []
    for t, c, _ in sims:
        between = np.cov(t, rowvar=False, ddof=1) if config.n_sim > 1 else np.full((J, J), np.nan)
        tau.append((c.mean(axis=0) - np.atleast_2d(between)).ravel())
    tau_ext = fit_extrapolant(grid, np.vstack(tau), config.kind)
    cov = np.asarray(tau_ext(-1.0)).reshape(J, J)
    cov = 0.5 * (cov + cov.T)
    return McsimexResult(theta, cov, seq, ext, naive, sum(r for _, _, r in sims))
