"""
Box-Cox measurement-error model.

The observed covariate ``W`` and the true covariate ``X`` are linked on a
Box-Cox transformed scale,

    box_cox(W, lam) = box_cox(X, lam) + U,
    box_cox(X, lam) ~ N(mu_lambda_x, sigma2_lambda_x),  U ~ N(0, sigma2_u).

This module estimates ``lam`` by profile maximum likelihood and the remaining
three parameters from replicate measurements by the method of moments.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .exceptions import DomainError, EstimationError, EstimationWarning

__all__ = [
    "BoxCoxParam",
    "ErrorModelParams",
    "box_cox_transform",
    "inverse_box_cox",
    "box_cox_log_likelihood",
    "fit_lambda",
    "fit_error_params",
    "validate_replicates",
    "support_bound",
]

LAMBDA_BOUNDS = (-2.0, 2.0)
LAMBDA_GRID_STEP = 0.01
LAMBDA_TOL = 1e-5
SIGMA2_X_FLOOR = 1e-8



@dataclass(frozen=True)
class BoxCoxParam:
    """Fitted Box-Cox exponent together with its profile log-likelihood."""

    lam: float
    log_likelihood: float = float("nan")


@dataclass(frozen=True)
class ErrorModelParams:
    """Parameters of the Box-Cox normal measurement-error model.

    ``sigma2_lambda_x_raw`` keeps the moment estimate before flooring so the
    estimating equations can be checked exactly.
    """

    lam: float
    mu_lambda_x: float
    sigma2_lambda_x: float
    sigma2_u: float
    sigma2_lambda_x_raw: float | None = None
    n_subjects: int | None = None
    n_replicates: int | None = None
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.sigma2_lambda_x > 0:
            raise EstimationError("sigma2_lambda_x must be positive")
        if not self.sigma2_u >= 0:
            raise EstimationError("sigma2_u must be non-negative")

    @property
    def sigma_lambda_x(self) -> float:
        return math.sqrt(self.sigma2_lambda_x)

    @property
    def sigma_u(self) -> float:
        return math.sqrt(self.sigma2_u)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "mu_lambda_x": self.mu_lambda_x,
            "sigma2_lambda_x": self.sigma2_lambda_x,
            "sigma2_u": self.sigma2_u,
        }


def box_cox_transform(x, lam: float):
    """Box-Cox transform ``(x**lam - 1) / lam`` (``log(x)`` at ``lam == 0``).

    Works elementwise on arrays. Uses ``expm1`` so the result is continuous
    in ``lam`` through zero.

    Raises
    ------
    DomainError
        If any ``x`` is not strictly positive.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError("Box-Cox transform requires strictly positive x")
    logx = np.log(arr)
    if lam == 0.0:
        out = logx
    else:
        out = np.expm1(lam * logx) / lam
    if np.ndim(out) == 0:
        return float(out)
    return out


def inverse_box_cox(t, lam: float):
    """Inverse of :func:`box_cox_transform`.

    Values outside the transform's range (``t <= -1/lam`` for ``lam > 0``,
    ``t >= -1/lam`` for ``lam < 0``) map to ``nan``.
    """
    t = np.asarray(t, dtype=float)
    if lam == 0.0:
        out = np.exp(t)
    else:
        lt = lam * t
        ok = lt > -1.0
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(ok, np.exp(np.log1p(np.where(ok, lt, 0.0)) / lam), np.nan)
    if np.ndim(out) == 0:
        return float(out)
    return out


def support_bound(lam: float) -> float:
    """Boundary ``-1/lam`` of the range of the transform (``nan`` at 0)."""
    return -1.0 / lam if lam != 0.0 else float("nan")


def in_support(t, lam: float):
    """Mask of transformed values that correspond to a positive original value."""
    t = np.asarray(t, dtype=float)
    if lam > 0:
        return t > -1.0 / lam
    if lam < 0:
        return t < -1.0 / lam
    return np.isfinite(t)


def _profile_ll(logw: np.ndarray, lams: np.ndarray) -> np.ndarray:
    n = logw.size
    lams = np.atleast_1d(np.asarray(lams, dtype=float))
    out = np.empty(lams.size)
    sum_log = logw.sum()
    centre = sum_log / n
    lc = logw - centre
    # var((w**lam - 1) / lam) = exp(2 lam centre) var(exp(lam lc)) / lam**2
    chunk = max(1, 2_000_000 // max(n, 1))
    for start in range(0, lams.size, chunk):
        lam = lams[start:start + chunk]
        nz = lam != 0.0
        with np.errstate(divide="ignore"):
            log_var = np.full(lam.size, np.log(lc.var()))
            if nz.any():
                v = np.exp(lam[nz, None] * lc[None, :]).var(axis=1)
                log_var[nz] = np.log(v) + 2.0 * lam[nz] * centre - 2.0 * np.log(np.abs(lam[nz]))
        out[start:start + chunk] = -0.5 * n * log_var + (lam - 1.0) * sum_log
    return out


def box_cox_log_likelihood(w, lam: float) -> float:
    """Profile log-likelihood of ``lam`` for positive observations ``w``.

    ``-(n/2) log(var(box_cox(w, lam))) + (lam - 1) * sum(log w)`` with the
    variance computed with ``ddof=0``.
    """
    w = np.asarray(w, dtype=float)
    if np.any(~(w > 0)):
        raise DomainError("Box-Cox likelihood requires strictly positive w")
    return float(_profile_ll(np.log(w), np.array([lam]))[0])


def fit_lambda(w, bounds: tuple[float, float] = LAMBDA_BOUNDS,
               step: float = LAMBDA_GRID_STEP, tol: float = LAMBDA_TOL) -> BoxCoxParam:
    """Maximum likelihood estimate of the Box-Cox exponent.

    A coarse grid over ``bounds`` locates the maximum, which is then refined
    by bounded scalar minimisation (golden-section with parabolic steps)
    between the neighbouring grid points.

    Parameters
    ----------
    w : array_like
        Strictly positive observations, at least 10 of them.
    bounds : (float, float)
        Search interval for ``lam``.
    step : float
        Grid spacing of the coarse search.
    tol : float
        Absolute tolerance on ``lam`` for the refinement.

    Returns
    -------
    BoxCoxParam

    Raises
    ------
    DomainError
        If an observation is not strictly positive.
    EstimationError
        If there are fewer than 10 observations or all of them are equal.
    """
    w = np.asarray(w, dtype=float).ravel()
    if w.size < 10:
        raise EstimationError(f"fit_lambda needs at least 10 observations, got {w.size}")
    if np.any(~(w > 0)):
        raise DomainError("fit_lambda requires strictly positive observations")
    logw = np.log(w)
    if np.ptp(logw) == 0.0:
        raise EstimationError("cannot estimate lambda from constant data")

    lo, hi = bounds
    n_grid = int(round((hi - lo) / step)) + 1
    grid = np.linspace(lo, hi, n_grid)
    ll = _profile_ll(logw, grid)
    if not np.any(np.isfinite(ll)):
        raise EstimationError("profile likelihood is not finite anywhere on the grid")
    k = int(np.nanargmax(ll))
    best_lam, best_ll = float(grid[k]), float(ll[k])

    a = float(grid[max(k - 1, 0)])
    b = float(grid[min(k + 1, n_grid - 1)])

    def neg(lam):
        return -float(_profile_ll(logw, np.array([lam]))[0])

    opt = optimize.minimize_scalar(neg, bounds=(a, b), method="bounded", options={"xatol": tol})
    if opt.success and -opt.fun >= best_ll:
        best_lam, best_ll = float(opt.x), float(-opt.fun)
    return BoxCoxParam(lam=best_lam, log_likelihood=best_ll)


def validate_replicates(replicates) -> np.ndarray:
    """Check and return replicate data as an ``(n0, R)`` float array."""
    reps = np.asarray(replicates, dtype=float)
    if reps.ndim != 2:
        raise EstimationError("replicate data must be a two-dimensional (subjects x replicates) array")
    n0, r = reps.shape
    if r < 2:
        raise EstimationError("at least two replicates per subject are needed to identify sigma2_u")
    if n0 < 2:
        raise EstimationError("at least two subjects with replicates are needed")
    if np.any(~(reps > 0)):
        raise DomainError("replicate measurements must be strictly positive")
    return reps


def fit_error_params(primary_w, replicates, lam: float | None = None) -> ErrorModelParams:
    """Estimate the measurement-error model from replicate measurements.

    If ``lam`` is not given it is estimated from ``primary_w`` with
    :func:`fit_lambda`. With ``T[i, r] = box_cox(W[i, r], lam)`` the
    estimates solve

    * ``mean_i(mean_r T[i, r]) = mu``
    * ``mean_i(var_r T[i, r]) = sigma2_u`` (per-subject variance with ``ddof=1``)
    * ``mean_i((mean_r T[i, r] - mu)**2) = sigma2_lambda_x + sigma2_u / R``

    ``sigma2_lambda_x`` is floored at ``1e-8``; when the floor is applied an
    :class:`EstimationWarning` is issued and recorded on the result.
    """
    reps = validate_replicates(replicates)
    if lam is None:
        lam = fit_lambda(primary_w).lam
    lam = float(lam)
    n0, r = reps.shape

    t = box_cox_transform(reps, lam)
    means = t.mean(axis=1)
    mu = float(means.mean())
    sigma2_u = float(t.var(axis=1, ddof=1).mean())
    raw = float(np.mean((means - mu) ** 2) - sigma2_u / r)

    notes = []
    sigma2_x = raw
    if not raw > SIGMA2_X_FLOOR:
        msg = (f"moment estimate of sigma2_lambda_x is {raw:.3g}; floored at {SIGMA2_X_FLOOR:g}")
        warnings.warn(msg, EstimationWarning, stacklevel=2)
        notes.append(msg)
        sigma2_x = SIGMA2_X_FLOOR
    return ErrorModelParams(
        lam=lam,
        mu_lambda_x=mu,
        sigma2_lambda_x=sigma2_x,
        sigma2_u=sigma2_u,
        sigma2_lambda_x_raw=raw,
        n_subjects=n0,
        n_replicates=r,
        warnings=tuple(notes),
    )
