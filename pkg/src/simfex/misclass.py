"""
Misclassification matrix and category probabilities induced by a continuous
measurement error.

``pi[j_true, j_obs] = P(W in C_j_obs | X in C_j_true)`` and
``p[j] = P(X in C_j)``. Both are computed under the Box-Cox normal error
model of :mod:`simfex.error_model`. The inner integral over ``w`` has a
closed form (a difference of normal CDFs), so each entry of ``pi`` reduces to a
one-dimensional integral on the transformed scale, evaluated by adaptive
Gauss-Kronrod quadrature.

Category indices are 0-based throughout the package: ``C_0 = (0, c_1)``,
``C_j = [c_j, c_{j+1})``, ``C_{J-1} = [c_{J-1}, inf)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import integrate, special

from .error_model import ErrorModelParams, box_cox_transform, inverse_box_cox
from .exceptions import DomainError, EstimationError, EstimationWarning, NumericalError

__all__ = [
    "CategoryScheme",
    "MisclassResult",
    "GroupMisclassResult",
    "categorize",
    "quantile_cutpoints",
    "normal_quantile_cutpoints",
    "cell_prob_w_given_x",
    "estimate_pi_p",
    "estimate_pi_p_by_group",
    "estimate_misclassification",
]

MIN_CATEGORY_PROB = 1e-6
QUAD_EPSABS = 1e-9
TAIL_SIGMAS = 10.0
SUPPORT_WARN_MASS = 1e-4
ROW_SUM_TOL = 1e-6


@dataclass(frozen=True)
class CategoryScheme:
    """Partition of the positive half-line by ``J - 1`` increasing cutpoints."""

    cutpoints: tuple[float, ...]

    def __init__(self, cutpoints):
        cuts = tuple(float(c) for c in np.asarray(cutpoints, dtype=float).ravel())
        if len(cuts) < 1:
            raise DomainError("a category scheme needs at least one cutpoint (J >= 2)")
        if any(not (c > 0 and math.isfinite(c)) for c in cuts):
            raise DomainError("cutpoints must be positive and finite")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise DomainError("cutpoints must be strictly increasing")
        object.__setattr__(self, "cutpoints", cuts)

    @property
    def n_categories(self) -> int:
        return len(self.cutpoints) + 1

    J = n_categories

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper bounds of each category on the original scale."""
        cuts = np.asarray(self.cutpoints)
        return np.r_[0.0, cuts], np.r_[cuts, np.inf]

    def transformed_bounds(self, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """Category bounds on the Box-Cox scale.

        The outermost bounds are open (``-inf``/``inf``) so that transformed
        normal mass outside the range of the transform is kept in the
        boundary categories.
        """
        t = box_cox_transform(np.asarray(self.cutpoints), lam)
        t = np.atleast_1d(t)
        return np.r_[-np.inf, t], np.r_[t, np.inf]

    def categorize(self, x):
        return categorize(x, self)


def categorize(x, scheme: CategoryScheme):
    """Index of the category containing ``x`` (0-based, half-open intervals).

    A point equal to a cutpoint belongs to the category above it.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("categorize requires strictly positive values")
    idx = np.searchsorted(np.asarray(scheme.cutpoints), arr, side="right")
    if np.ndim(idx) == 0:
        return int(idx)
    return idx


def quantile_cutpoints(w, n_categories: int) -> CategoryScheme:
    """Cutpoints at the empirical ``1/J, ..., (J-1)/J`` quantiles of ``w``."""
    if n_categories < 2:
        raise DomainError("need at least two categories")
    w = np.asarray(w, dtype=float)
    qs = np.arange(1, n_categories) / n_categories
    return CategoryScheme(np.quantile(w, qs))


def normal_quantile_cutpoints(lam: float, mu_lambda_x: float, sigma_lambda_x: float,
                              n_categories: int) -> CategoryScheme:
    """Cutpoints at the exact quantiles of ``X`` when ``box_cox(X)`` is normal."""
    qs = np.arange(1, n_categories) / n_categories
    t = mu_lambda_x + sigma_lambda_x * special.ndtri(qs)
    return CategoryScheme(inverse_box_cox(t, lam))


def _out_of_support_mass(params: ErrorModelParams) -> float:
    lam = params.lam
    if lam == 0.0:
        return 0.0
    z = (-1.0 / lam - params.mu_lambda_x) / params.sigma_lambda_x
    return float(special.ndtr(z) if lam > 0 else special.ndtr(-z))


def cell_prob_w_given_x(x, j: int, params: ErrorModelParams, scheme: CategoryScheme):
    """``P(W in C_j | X = x)`` under the Box-Cox normal error model."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("x must be strictly positive")
    lower, upper = scheme.transformed_bounds(params.lam)
    if not 0 <= j < scheme.n_categories:
        raise DomainError(f"category index {j} out of range")
    tx = np.asarray(box_cox_transform(x, params.lam))
    if params.sigma2_u == 0.0:
        out = ((tx >= lower[j]) & (tx < upper[j])).astype(float)
    else:
        su = params.sigma_u
        out = special.ndtr((upper[j] - tx) / su) - special.ndtr((lower[j] - tx) / su)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class MisclassResult:
    """Misclassification matrix ``pi`` (rows: true category) and category probabilities ``p``."""

    pi: np.ndarray
    p: np.ndarray
    params: ErrorModelParams | None = None
    scheme: CategoryScheme | None = None
    out_of_support_mass: float = 0.0
    max_row_correction: float = 0.0
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __iter__(self):
        # allows ``pi, p = estimate_pi_p(...)``
        yield self.pi
        yield self.p


def estimate_pi_p(params: ErrorModelParams, scheme: CategoryScheme) -> MisclassResult:
    """Misclassification matrix and category probabilities.

    ``p[j]`` is a normal probability on the transformed scale. Row ``j'`` of
    ``pi`` integrates ``P(W in C_j | t) * phi_t`` over the transformed true
    category ``j'``; all rows are integrated together in one vector-valued
    adaptive Gauss-Kronrod call on ``[0, 1]``. Outer intervals are truncated
    at ``mu +- 10 sigma``.

    Raises
    ------
    EstimationError
        If some ``p[j]`` is below ``1e-6``.
    NumericalError
        If a quadrature row sum deviates from 1 by more than ``1e-6``.
    """
    J = scheme.n_categories
    mu, sx = params.mu_lambda_x, params.sigma_lambda_x
    lower, upper = scheme.transformed_bounds(params.lam)
    notes = []

    oos = _out_of_support_mass(params)
    if oos > SUPPORT_WARN_MASS:
        msg = f"normal model puts mass {oos:.2e} outside the Box-Cox range; kept in boundary categories"
        warnings.warn(msg, EstimationWarning, stacklevel=2)
        notes.append(msg)

    cdf_hi = special.ndtr((upper - mu) / sx)
    cdf_lo = special.ndtr((lower - mu) / sx)
    p = cdf_hi - cdf_lo
    if np.any(p < MIN_CATEGORY_PROB):
        bad = [int(j) for j in np.flatnonzero(p < MIN_CATEGORY_PROB)]
        raise EstimationError(f"categories {bad} have probability below {MIN_CATEGORY_PROB:g}")
    p = p / p.sum()

    if params.sigma2_u == 0.0:
        return MisclassResult(np.eye(J), p, params, scheme, oos, 0.0, tuple(notes))

    su = params.sigma_u
    a = np.clip(lower, mu - TAIL_SIGMAS * sx, mu + TAIL_SIGMAS * sx)
    b = np.clip(upper, mu - TAIL_SIGMAS * sx, mu + TAIL_SIGMAS * sx)
    width = b - a

    def integrand(s):
        t = a + width * s                                   # (J,) one point per true category
        dens = np.exp(-0.5 * ((t - mu) / sx) ** 2) / (sx * math.sqrt(2.0 * math.pi))
        cell = special.ndtr((upper[None, :] - t[:, None]) / su) - special.ndtr((lower[None, :] - t[:, None]) / su)
        return (width * dens)[:, None] * cell

    raw, _err = integrate.quad_vec(integrand, 0.0, 1.0, epsabs=QUAD_EPSABS, epsrel=1e-10,
                                   norm="max", quadrature="gk21", limit=2000)
    pi = raw / (cdf_hi - cdf_lo)[:, None]
    pi = np.clip(pi, 0.0, None)
    sums = pi.sum(axis=1)
    correction = float(np.max(np.abs(sums - 1.0)))
    if correction > ROW_SUM_TOL:
        raise NumericalError(f"misclassification rows sum to 1 only within {correction:.2e}")
    pi = pi / sums[:, None]
    return MisclassResult(pi, p, params, scheme, oos, correction, tuple(notes))


@dataclass(frozen=True)
class GroupMisclassResult:
    """Per-level misclassification matrices with deviations from the pooled estimate.

    Deviations are maximum absolute entry differences, ``max|pi(z) - pi|`` and
    ``max|p(z) - p|``.
    """

    by_group: dict
    pooled: MisclassResult | None
    pi_deviation: dict
    p_deviation: dict


def estimate_pi_p_by_group(params_by_group: Mapping, scheme: CategoryScheme,
                           pooled_params: ErrorModelParams | None = None) -> GroupMisclassResult:
    """Apply :func:`estimate_pi_p` within each level of a discrete covariate.

    When ``pooled_params`` is given the pooled matrices are computed as well
    and each level's deviation from them is reported, which is the check for
    whether the dependence between ``X`` and the covariate can be ignored.
    """
    if not params_by_group:
        raise EstimationError("no groups supplied")
    by_group = {}
    for level, params in params_by_group.items():
        if params is None:
            raise EstimationError(f"group {level!r} has no error-model parameters")
        by_group[level] = estimate_pi_p(params, scheme)
    pooled = estimate_pi_p(pooled_params, scheme) if pooled_params is not None else None
    pi_dev, p_dev = {}, {}
    if pooled is not None:
        for level, res in by_group.items():
            pi_dev[level] = float(np.max(np.abs(res.pi - pooled.pi)))
            p_dev[level] = float(np.max(np.abs(res.p - pooled.p)))
    return GroupMisclassResult(by_group, pooled, pi_dev, p_dev)


def estimate_misclassification(primary_w, replicates, scheme: CategoryScheme,
                               lam: float | None = None) -> MisclassResult:
    """Estimate ``pi`` and ``p`` from observed data.

    Fits the Box-Cox exponent on ``primary_w`` (unless ``lam`` is given),
    the remaining error-model parameters from ``replicates``, and evaluates
    :func:`estimate_pi_p` at the estimates.
    """
    from .error_model import fit_error_params

    params = fit_error_params(primary_w, replicates, lam=lam)
    return estimate_pi_p(params, scheme)
