"""
Row-stochastic matrices: validation, fractional powers and the linear map
from true to naive category coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, NumericalError

__all__ = [
    "MatrixPowerResult",
    "check_stochastic",
    "check_probabilities",
    "fractional_power",
    "naive_map_matrix",
]

ROW_TOL = 1e-10
MAX_EIGVEC_COND = 1e12
MAX_IMAG_RESIDUAL = 1e-6


def check_stochastic(pi, tol: float = ROW_TOL) -> np.ndarray:
    """Return ``pi`` as a float array after checking it is square, non-negative
    and row-stochastic."""
    m = np.asarray(pi, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError("a misclassification matrix must be square")
    if np.any(m < 0) or not np.all(np.isfinite(m)):
        raise DomainError("misclassification matrix has negative or non-finite entries")
    if np.max(np.abs(m.sum(axis=1) - 1.0)) > tol:
        raise DomainError("misclassification matrix rows must sum to one")
    return m


def check_probabilities(p, tol: float = ROW_TOL) -> np.ndarray:
    v = np.asarray(p, dtype=float)
    if v.ndim != 1 or np.any(v < 0) or abs(v.sum() - 1.0) > tol:
        raise DomainError("category probabilities must be non-negative and sum to one")
    return v


@dataclass(frozen=True)
class MatrixPowerResult:
    """A power of a stochastic matrix with numerical diagnostics.

    ``imag_residual`` is the largest imaginary part discarded. ``clip_mass``
    is the total negative mass of the real principal power; when ``clipped``
    is True that mass was set to zero and the rows renormalised.
    """

    matrix: np.ndarray
    imag_residual: float = 0.0
    clip_mass: float = 0.0
    clipped: bool = False


def fractional_power(pi, eta: float, clip: bool = False) -> MatrixPowerResult:
    """``pi ** eta`` for a row-stochastic matrix and ``eta >= 0``.

    Integer exponents use repeated multiplication. Other exponents use the
    principal branch of the eigendecomposition ``V diag(d**eta) V^-1`` and
    keep the real part. Its rows sum to one but, for weakly misclassifying
    matrices, a few entries can be slightly negative (no stochastic root
    exists then). With ``clip=True`` those entries are set to zero and the
    rows renormalised, giving a proper stochastic matrix that is no longer
    an exact power.

    Raises
    ------
    DomainError
        For a negative exponent.
    NumericalError
        If the eigenvector matrix is too ill-conditioned (``cond > 1e12``) or
        the discarded imaginary part exceeds ``1e-6``.
    """
    m = check_stochastic(pi, tol=1e-8)
    eta = float(eta)
    if not eta >= 0:
        raise DomainError("matrix power exponent must be non-negative")
    J = m.shape[0]
    if eta == 0.0:
        return MatrixPowerResult(np.eye(J))
    if eta.is_integer():
        return MatrixPowerResult(np.linalg.matrix_power(m, int(eta)))

    try:
        d, v = np.linalg.eig(m)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    cond = np.linalg.cond(v)
    if not cond <= MAX_EIGVEC_COND:
        raise NumericalError(f"misclassification matrix is not safely diagonalisable (cond {cond:.3g})")
    dpow = np.power(d.astype(complex), eta)
    full = np.linalg.solve(v.T, (v * dpow).T).T   # v @ diag(dpow) @ inv(v)
    imag = float(np.max(np.abs(full.imag)))
    if imag > MAX_IMAG_RESIDUAL:
        raise NumericalError(f"matrix power has imaginary residual {imag:.3g}; power ill-defined")
    real = full.real
    neg = real < 0
    clip_mass = float(-real[neg].sum())
    if not clip or clip_mass == 0.0:
        return MatrixPowerResult(real, imag, clip_mass)
    real = np.where(neg, 0.0, real)
    real = real / real.sum(axis=1, keepdims=True)
    return MatrixPowerResult(real, imag, clip_mass, True)


def naive_map_matrix(pi, p) -> np.ndarray:
    """Matrix ``A`` with ``theta_naive = A @ theta``.

    ``A[j, k] = pi[k, j] * p[k] / sum_l pi[l, j] * p[l]``, the probability
    that the true category is ``k`` given the observed category ``j``. Each
    row sums to one.
    """
    pi = np.asarray(pi, dtype=float)
    p = np.asarray(p, dtype=float)
    if pi.ndim != 2 or pi.shape[0] != pi.shape[1] or p.shape != (pi.shape[0],):
        raise DomainError("pi must be J x J and p of length J")
    if np.any(p <= 0):
        raise DomainError("all category probabilities must be positive")
    weighted = pi * p[:, None]
    col = weighted.sum(axis=0)
    if np.any(col <= 0):
        raise NumericalError("an observed category has zero probability; naive map undefined")
    return weighted.T / col[:, None]
