"""
No-intercept regression on category indicators plus precisely measured
covariates, for identity, logit and probit links.

The design has one indicator column per category and no intercept, so
``theta[j]`` is the linear predictor for category ``j`` at ``z = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .exceptions import DataError, DomainError, NumericalError
from .misclass import CategoryScheme, categorize

__all__ = ["LINKS", "Dataset", "FitResult", "build_design", "fit", "fit_categories",
           "link_function", "inverse_link"]

LINKS = ("identity", "logit", "probit")
MAX_ITER = 100
COEF_TOL = 1e-8
SEPARATION_BOUND = 30.0


@dataclass(frozen=True)
class Dataset:
    """Observed primary data: response ``y``, mismeasured covariate ``w`` and
    optional covariates ``z`` (n x q) and discrete ``group`` labels."""

    y: np.ndarray
    w: np.ndarray
    z: np.ndarray | None = None
    group: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        w = np.asarray(self.w, dtype=float).ravel()
        if y.shape != w.shape:
            raise DataError("y and w must have the same length")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)
        if self.z is not None:
            z = np.asarray(self.z, dtype=float)
            if z.ndim == 1:
                z = z[:, None]
            if z.shape[0] != y.size:
                raise DataError("z must have one row per observation")
            object.__setattr__(self, "z", z if z.shape[1] else None)
        if self.group is not None:
            g = np.asarray(self.group).ravel()
            if g.size != y.size:
                raise DataError("group must have one label per observation")
            object.__setattr__(self, "group", g)

    @property
    def n(self) -> int:
        return self.y.size

    def take(self, idx) -> "Dataset":
        """Subset (or resample) rows."""
        return Dataset(
            self.y[idx],
            self.w[idx],
            None if self.z is None else self.z[idx],
            None if self.group is None else self.group[idx],
        )


@dataclass(frozen=True)
class FitResult:
    """Coefficients of a fitted no-intercept categorical model.

    ``cov`` is the covariance of ``(theta, theta_z)`` from the inverse observed
    information. ``flagged`` marks a fit that should not be trusted
    (non-convergence or apparent separation).
    """

    theta: np.ndarray
    theta_z: np.ndarray
    cov: np.ndarray
    link: str
    converged: bool = True
    iterations: int = 0
    separation: bool = False
    messages: tuple[str, ...] = field(default=(), compare=False)

    @property
    def se(self) -> np.ndarray:
        J = self.theta.size
        return np.sqrt(np.clip(np.diag(self.cov)[:J], 0, None))

    @property
    def se_z(self) -> np.ndarray:
        J = self.theta.size
        return np.sqrt(np.clip(np.diag(self.cov)[J:], 0, None))

    @property
    def theta_cov(self) -> np.ndarray:
        J = self.theta.size
        return self.cov[:J, :J]

    @property
    def flagged(self) -> bool:
        return (not self.converged) or self.separation

    @property
    def relative_difference(self) -> float:
        return float(self.theta[-1] - self.theta[0])


def _check_link(link: str) -> str:
    if link not in LINKS:
        raise DomainError(f"unknown link {link!r}; expected one of {LINKS}")
    return link


def link_function(mu, link: str):
    """``g(mu)`` for the supported links."""
    mu = np.asarray(mu, dtype=float)
    if link == "identity":
        return mu
    if link == "logit":
        return special.logit(mu)
    if link == "probit":
        return special.ndtri(mu)
    raise DomainError(f"unknown link {link!r}")


def inverse_link(eta, link: str):
    eta = np.asarray(eta, dtype=float)
    if link == "identity":
        return eta
    if link == "logit":
        return special.expit(eta)
    if link == "probit":
        return special.ndtr(eta)
    raise DomainError(f"unknown link {link!r}")


def _indicator_block(categories: np.ndarray, J: int) -> np.ndarray:
    block = np.zeros((categories.size, J))
    block[np.arange(categories.size), categories] = 1.0
    return block


def _check_categories(categories: np.ndarray, J: int) -> np.ndarray:
    counts = np.bincount(categories, minlength=J)
    empty = [int(j) for j in np.flatnonzero(counts == 0)]
    if empty:
        raise DataError(f"categories {empty} have no observations")
    return counts


def build_design(w, scheme: CategoryScheme, z=None) -> np.ndarray:
    """``n x (J + q)`` design: category indicators followed by ``z`` columns.

    Raises
    ------
    DataError
        If a category has no observations.
    """
    cats = np.atleast_1d(categorize(w, scheme))
    J = scheme.n_categories
    _check_categories(cats, J)
    block = _indicator_block(cats, J)
    if z is None:
        return block
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    return np.hstack([block, z])


def fit(data: Dataset, scheme: CategoryScheme, link: str) -> FitResult:
    """Fit the naive model ``g(E[Y | W, Z]) = theta . W^c + theta_z . Z``."""
    cats = np.atleast_1d(categorize(data.w, scheme))
    return fit_categories(data.y, cats, scheme.n_categories, data.z, link)


def fit_categories(y, categories, n_categories: int, z=None, link: str = "identity") -> FitResult:
    """Fit the categorical model given category labels directly.

    Identity link uses least squares (group means when there are no
    covariates). Binary links use iteratively reweighted least squares with
    step-halving, stopping when the largest coefficient change is below
    ``1e-8`` or after 100 iterations. A non-converged fit or one with a
    coefficient above 30 in magnitude is returned flagged rather than raising.
    """
    _check_link(link)
    y = np.asarray(y, dtype=float).ravel()
    cats = np.asarray(categories, dtype=np.intp).ravel()
    J = int(n_categories)
    if y.size != cats.size:
        raise DataError("y and categories must have the same length")
    counts = _check_categories(cats, J)
    if z is not None:
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[1] == 0:
            z = None
    if link != "identity" and np.any((y != 0) & (y != 1)):
        raise DataError("binary links require a 0/1 response")

    if link == "identity":
        return _fit_ols(y, cats, J, counts, z)
    if z is None:
        return _fit_saturated(y, cats, J, counts, link)
    X = _indicator_block(cats, J)
    if z is not None:
        X = np.hstack([X, z])
    return _fit_irls(y, X, J, link)


def _fit_ols(y, cats, J, counts, z) -> FitResult:
    n = y.size
    if z is None:
        theta = np.array([y[cats == j].mean() for j in range(J)])
        resid = y - theta[cats]
        dof = n - J
        s2 = float(resid @ resid) / dof if dof > 0 else float("nan")
        cov = np.diag(s2 / counts)
        return FitResult(theta, np.empty(0), cov, "identity", True, 1)
    X = np.hstack([_indicator_block(cats, J), z])
    p = X.shape[1]
    q, r = np.linalg.qr(X)
    if np.min(np.abs(np.diag(r))) < 1e-10 * np.max(np.abs(np.diag(r))):
        raise NumericalError("design matrix is rank deficient")
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - X @ beta
    dof = n - p
    s2 = float(resid @ resid) / dof if dof > 0 else float("nan")
    rinv = np.linalg.inv(r)
    cov = s2 * (rinv @ rinv.T)
    return FitResult(beta[:J], beta[J:], cov, "identity", True, 1)


def _fit_saturated(y, cats, J, counts, link) -> FitResult:
    # indicators only: the MLE is g(category mean) in closed form
    ones = np.bincount(cats, weights=y, minlength=J)
    ybar = ones / counts
    if np.any((ybar <= 0) | (ybar >= 1)):
        theta = np.asarray(link_function(np.clip(ybar, 1e-15, 1 - 1e-15), link))
        return FitResult(theta, np.empty(0), np.full((J, J), np.nan), link, True, 0, True,
                         ("a category has an all-0 or all-1 response: separation",))
    theta = np.asarray(link_function(ybar, link))
    if link == "logit":
        info = counts * ybar * (1.0 - ybar)
    else:
        log_phi = -0.5 * theta ** 2 - 0.5 * np.log(2.0 * np.pi)
        r1 = np.exp(log_phi - special.log_ndtr(theta))
        r0 = np.exp(log_phi - special.log_ndtr(-theta))
        info = ones * (theta * r1 + r1 ** 2) + (counts - ones) * (r0 ** 2 - theta * r0)
    separation = bool(np.max(np.abs(theta)) > SEPARATION_BOUND)
    return FitResult(theta, np.empty(0), np.diag(1.0 / info), link, True, 0, separation)


def _loglik(y, eta, link) -> float:
    if link == "logit":
        # y*eta - log(1 + e^eta)
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return float(np.sum(y * special.log_ndtr(eta) + (1 - y) * special.log_ndtr(-eta)))


def _irls_pieces(eta, link):
    """Mean, derivative d mu / d eta and variance mu(1 - mu)."""
    if link == "logit":
        mu = special.expit(eta)
        var = mu * (1.0 - mu)
        dmu = var
    else:
        mu = special.ndtr(eta)
        var = mu * special.ndtr(-eta)
        dmu = np.exp(-0.5 * eta ** 2) / np.sqrt(2.0 * np.pi)
    var = np.maximum(var, 1e-300)
    return mu, dmu, var


def _observed_information(X, y, eta, link) -> np.ndarray:
    if link == "logit":
        mu = special.expit(eta)
        h = mu * (1.0 - mu)
    else:
        log_phi = -0.5 * eta ** 2 - 0.5 * np.log(2.0 * np.pi)
        r1 = np.exp(log_phi - special.log_ndtr(eta))
        r0 = np.exp(log_phi - special.log_ndtr(-eta))
        # minus the second derivative of the probit log-likelihood in eta
        h = y * (eta * r1 + r1 ** 2) + (1 - y) * (r0 ** 2 - eta * r0)
    return (X * h[:, None]).T @ X


def _fit_irls(y, X, J, link) -> FitResult:
    messages = []
    mu0 = (y + 0.5) / 2.0
    eta = np.asarray(link_function(mu0, link))
    beta, *_ = np.linalg.lstsq(X, eta, rcond=None)
    eta = X @ beta
    ll = _loglik(y, eta, link)
    converged = False
    separation = False
    it = 0
    for it in range(1, MAX_ITER + 1):
        mu, dmu, var = _irls_pieces(eta, link)
        dmu = np.maximum(dmu, 1e-300)
        wts = dmu ** 2 / var
        zwork = eta + (y - mu) / dmu
        sw = np.sqrt(wts)
        new_beta, *_ = np.linalg.lstsq(X * sw[:, None], zwork * sw, rcond=None)
        step = new_beta - beta
        new_eta = X @ new_beta
        new_ll = _loglik(y, new_eta, link)
        halvings = 0
        while not (new_ll >= ll - 1e-12 * abs(ll)) and halvings < 30:
            step *= 0.5
            new_beta = beta + step
            new_eta = X @ new_beta
            new_ll = _loglik(y, new_eta, link)
            halvings += 1
        beta, eta, ll = new_beta, new_eta, new_ll
        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            separation = True
            messages.append("coefficient magnitude above 30: possible separation")
            break
        if np.max(np.abs(step)) < COEF_TOL:
            converged = True
            break
    if not converged and not separation:
        messages.append(f"IRLS did not converge in {MAX_ITER} iterations")
    info = _observed_information(X, y, eta, link)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = np.full(info.shape, np.nan)
        messages.append("observed information is singular")
        converged = False
    return FitResult(beta[:J].copy(), beta[J:].copy(), cov, link, converged, it, separation,
                     tuple(messages))
