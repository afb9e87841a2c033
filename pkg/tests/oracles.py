"""
Independent reference computations used by the tests.

These deliberately avoid the package's own integration code: the
misclassification oracle simulates ``(X, W)`` pairs with randomised Sobol
points, and the truncated-normal oracle uses the closed-form moments.

``python -m tests.oracles`` regenerates ``tests/data/oracle_pi.json``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy import special, stats

DATA = Path(__file__).parent / "data"

# transformed-scale means/variances keep the normal mass inside the Box-Cox range
SWEEP_SETTINGS = {0.0: (2.0, 0.25), 0.5: (4.0, 1.0), 1.0: (10.0, 4.0)}
SWEEP_NSR = (0.2, 0.8, 1.0)
SWEEP_J = (3, 5)


def _inv_box_cox(t, lam):
    if lam == 0.0:
        return np.exp(t)
    base = lam * t + 1.0
    out = np.full(t.shape, np.nan)
    ok = base > 0
    out[ok] = base[ok] ** (1.0 / lam)
    return out


def _category(x, cuts):
    # nan (no positive preimage) counts as below every cutpoint
    cats = np.zeros(x.shape, dtype=int)
    for c in cuts:
        cats += np.nan_to_num(x, nan=-np.inf) >= c
    return cats


def quantile_cuts(lam, mu, s2x, J):
    z = stats.norm.ppf(np.arange(1, J) / J)
    return _inv_box_cox(mu + math.sqrt(s2x) * z, lam)


def rqmc_pi_p(lam, mu, s2x, s2u, cuts, m=20, seed=0):
    """``(pi, p)`` from ``2**m`` scrambled Sobol draws of ``(X, W)``."""
    pts = stats.qmc.Sobol(d=2, scramble=True, seed=seed).random_base2(m)
    pts = np.clip(pts, 1e-16, 1 - 1e-16)
    t = mu + math.sqrt(s2x) * special.ndtri(pts[:, 0])
    tw = t + math.sqrt(s2u) * special.ndtri(pts[:, 1])
    cx = _category(_inv_box_cox(t, lam), cuts)
    cw = _category(_inv_box_cox(tw, lam), cuts)
    J = len(cuts) + 1
    counts = np.zeros((J, J))
    np.add.at(counts, (cx, cw), 1.0)
    p = counts.sum(axis=1) / counts.sum()
    pi = counts / counts.sum(axis=1, keepdims=True)
    return pi, p


def sweep_cases():
    for lam, (mu, s2x) in SWEEP_SETTINGS.items():
        for nsr in SWEEP_NSR:
            for J in SWEEP_J:
                yield dict(lam=lam, mu=mu, s2x=s2x, s2u=nsr * s2x, nsr=nsr, J=J,
                           cuts=quantile_cuts(lam, mu, s2x, J).tolist())


def truncated_normal_means(mu, sigma, cuts):
    """``E[X | c_{j} <= X < c_{j+1}]`` for normal ``X`` (closed form)."""
    a = np.r_[-np.inf, cuts]
    b = np.r_[cuts, np.inf]
    alpha, beta = (a - mu) / sigma, (b - mu) / sigma
    mass = stats.norm.cdf(beta) - stats.norm.cdf(alpha)
    return mu + sigma * (stats.norm.pdf(alpha) - stats.norm.pdf(beta)) / mass


def freeze(path=DATA / "oracle_pi.json"):
    cases = []
    for case in sweep_cases():
        pi, p = rqmc_pi_p(case["lam"], case["mu"], case["s2x"], case["s2u"], case["cuts"])
        cases.append({**case, "pi": pi.tolist(), "p": p.tolist()})
    path.write_text(json.dumps({"draws": 2 ** 20, "cases": cases}, indent=1) + "\n")


if __name__ == "__main__":
    freeze()
