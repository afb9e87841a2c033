import os
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simfex.error_model import ErrorModelParams
from simfex.estimator import (bootstrap_inference, check_grid, contrast_map, extrapolate_naive,
                              fit_extrapolant, fit_simfex, naive_map, pseudo_sequence, simfex_contrast_estimate,
                              simfex_estimate)
from simfex.exceptions import DomainError, EstimationWarning
from simfex.glm import Dataset
from simfex.misclass import estimate_pi_p
from simfex.simulate import GenConfig, generate, true_theta
from simfex.stochastic_matrix import fractional_power, naive_map_matrix

from .conftest import misclass_matrix

GRID = (0.5, 1.0, 1.5, 2.0)
PI2 = np.array([[0.8, 0.2], [0.3, 0.7]])


def _synthetic(seed=0, n=1000, nsr=1.0, J=3, model="linear"):
    cfg = GenConfig.default("normal", model, nsr=nsr, J=J, n=n)
    sim = generate(cfg, np.random.default_rng(seed))
    return cfg, sim


def test_naive_map_examples():
    np.testing.assert_allclose(naive_map(PI2, [0.5, 0.5], [0.0, 1.0]), [3 / 11, 7 / 9], rtol=0, atol=1e-15)
    theta = np.array([0.3, -1.0, 2.0])
    np.testing.assert_array_equal(naive_map(np.eye(3), [0.2, 0.3, 0.5], theta), theta)
    pi, p = misclass_matrix(nsr=1.0, J=3)
    np.testing.assert_allclose(naive_map(pi, p, [1.7] * 3), 1.7, rtol=0, atol=1e-14)


def test_pseudo_sequence_examples():
    pi, p = misclass_matrix(nsr=0.8, J=5)
    theta = np.array([0.1, 0.4, 0.5, 0.9, 1.3])
    seq = pseudo_sequence(pi, p, theta, [0.0, 0.5, 1.0, 2.0])
    np.testing.assert_array_equal(seq[0], theta)
    np.testing.assert_array_equal(seq[2], naive_map(pi, p, theta))
    np.testing.assert_array_equal(pseudo_sequence(np.eye(5), p, theta, GRID), np.tile(theta, (4, 1)))


def test_extrapolant_exact_quadratic():
    g = np.array(GRID)
    gamma = np.array([[1.0, -0.5, 0.25], [0.0, 2.0, -1.0]])
    seq = np.column_stack([gamma[j, 0] + gamma[j, 1] * g + gamma[j, 2] * g ** 2 for j in range(2)])
    ext = fit_extrapolant(g, seq)
    np.testing.assert_allclose(ext.gamma, gamma, rtol=0, atol=1e-10)
    np.testing.assert_allclose(ext(g), seq, rtol=0, atol=1e-10)
    np.testing.assert_allclose(ext(-1.0), gamma[:, 0] - gamma[:, 1] + gamma[:, 2], rtol=0, atol=1e-10)


def test_extrapolant_constant_and_linear():
    ext = fit_extrapolant(GRID, np.full((4, 3), 0.7))
    np.testing.assert_allclose(ext.gamma[:, 1:], 0.0, atol=1e-10)
    lin = fit_extrapolant(GRID, np.array(GRID) + 2.0, kind="linear")
    np.testing.assert_allclose(lin.gamma[0], [2.0, 1.0], rtol=0, atol=1e-12)
    assert lin(-1.0)[0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("grid,kind", [((0.5, 1.0), "quadratic"), ((1.0, 0.5, 2.0), "quadratic"),
                                       ((0.5, 0.5, 1.0), "quadratic"), ((-0.5, 1.0, 2.0), "quadratic"),
                                       ((0.5,), "linear"), (GRID, "exponential")])
def test_grid_validation(grid, kind):
    with pytest.raises(DomainError):
        check_grid(grid, kind)


@given(st.floats(-5, 5), st.integers(0, 2 ** 31))
def test_shift_equivariance(c, seed):
    pi, p = misclass_matrix(nsr=1.0, J=3)
    theta = np.random.default_rng(seed).normal(size=3)
    base = extrapolate_naive(theta, pi, p)[0]
    shifted = extrapolate_naive(theta + c, pi, p)[0]
    np.testing.assert_allclose(shifted, base + c, rtol=0, atol=1e-10)


@pytest.mark.parametrize("eta", [1, 2, 3])
def test_composition_with_stationary_p(eta):
    pi, _ = misclass_matrix(nsr=1.0, J=4)
    vals, vecs = np.linalg.eig(pi.T)
    stat = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    stat = stat / stat.sum()
    theta = np.array([0.0, 0.3, 0.8, 1.0])
    lhs = naive_map(fractional_power(pi, 1 + eta).matrix, stat, theta)
    rhs = naive_map(fractional_power(pi, eta).matrix, stat, naive_map(pi, stat, theta))
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-8)


def test_identity_pi_returns_naive():
    _, sim = _synthetic()
    res = simfex_estimate(sim.dataset, sim.scheme, "identity", np.eye(3), [1 / 3] * 3)
    np.testing.assert_allclose(res.theta_simfex, res.naive.theta, rtol=0, atol=1e-12)
    assert res.relative_difference == res.theta_simfex[-1] - res.theta_simfex[0]


def test_relative_difference_definition():
    _, sim = _synthetic(seed=4)
    res = fit_simfex(sim.dataset, sim.replicates, sim.scheme, "identity")
    assert res.relative_difference == float(res.theta_simfex[-1] - res.theta_simfex[0])
    np.testing.assert_array_equal(res.contrasts, res.theta_simfex[1:] - res.theta_simfex[0])
    assert res.misclass is not None and res.pseudo_sequence.shape == (4, 3)


def test_contrast_single_level_matches():
    _, sim = _synthetic(seed=1, nsr=0.8, J=5)
    pi, p = misclass_matrix(nsr=0.8, J=5)
    full = simfex_estimate(sim.dataset, sim.scheme, "identity", pi, p)
    con = simfex_contrast_estimate(sim.dataset, sim.scheme, "identity", {"all": (pi, p)})
    np.testing.assert_allclose(con.contrasts, full.contrasts, rtol=0, atol=1e-10)
    assert con.relative_difference == pytest.approx(full.relative_difference, abs=1e-10)


def test_contrast_identical_levels_match():
    _, sim = _synthetic(seed=2)
    pi, p = misclass_matrix(nsr=1.0, J=3)
    group = np.where(np.arange(sim.w.size) % 3 == 0, "a", "b")
    data = Dataset(sim.y, sim.w, group=group)
    full = simfex_estimate(data, sim.scheme, "identity", pi, p)
    con = simfex_contrast_estimate(data, sim.scheme, "identity", {"a": (pi, p), "b": (pi.copy(), p.copy())})
    np.testing.assert_allclose(con.contrasts, full.contrasts, rtol=0, atol=1e-8)


def test_contrast_identity_pi_unchanged():
    _, sim = _synthetic(seed=3)
    group = np.where(np.arange(sim.w.size) % 2 == 0, 0, 1)
    data = Dataset(sim.y, sim.w, group=group)
    p = [1 / 3] * 3
    con = simfex_contrast_estimate(data, sim.scheme, "identity", {0: (np.eye(3), p), 1: (np.eye(3), p)})
    np.testing.assert_allclose(con.contrasts, con.naive_contrasts, rtol=0, atol=1e-12)


def _direct_contrast(pi, p, tilde):
    # theta_naive_j - theta_naive_1 written out as Bayes-weighted sums
    J = len(p)
    full = [0.0, *tilde]
    naive = []
    for j in range(J):
        den = sum(pi[k][j] * p[k] for k in range(J))
        naive.append(sum(pi[k][j] * p[k] * full[k] for k in range(J)) / den)
    return [naive[j] - naive[0] for j in range(1, J)]


def test_contrast_two_levels_direct():
    _, sim = _synthetic(seed=5)
    pi_a, p_a = misclass_matrix(nsr=1.0, J=3)
    pi_b, p_b = misclass_matrix(nsr=0.2, J=3, mu=10.5)
    group = np.where(np.arange(sim.w.size) < 400, "a", "b")
    data = Dataset(sim.y, sim.w, group=group)
    con = simfex_contrast_estimate(data, sim.scheme, "identity", {"a": (pi_a, p_a), "b": (pi_b, p_b)})
    tilde = con.naive_contrasts
    for k, eta in enumerate(GRID):
        a = _direct_contrast(fractional_power(pi_a, eta).matrix, p_a, tilde)
        b = _direct_contrast(fractional_power(pi_b, eta).matrix, p_b, tilde)
        np.testing.assert_allclose(con.pseudo_sequence[k], 0.4 * np.array(a) + 0.6 * np.array(b),
                                   rtol=0, atol=1e-12)
    assert con.weights == {"a": 0.4, "b": 0.6}
    np.testing.assert_allclose(contrast_map(pi_a, p_a, tilde), _direct_contrast(pi_a, p_a, tilde), atol=1e-14)


def test_bootstrap_deterministic():
    _, sim = _synthetic(seed=6)
    kw = dict(n_resamples=60, seed=11)
    a = bootstrap_inference(sim.dataset, sim.replicates, sim.scheme, "identity", **kw)
    b = bootstrap_inference(sim.dataset, sim.replicates, sim.scheme, "identity", **kw)
    c = bootstrap_inference(sim.dataset, sim.replicates, sim.scheme, "identity", n_jobs=3, **kw)
    for other in (b, c):
        np.testing.assert_array_equal(a.bootstrap.estimates, other.bootstrap.estimates)
        np.testing.assert_array_equal(a.bootstrap.se, other.bootstrap.se)
    lo, hi = a.bootstrap.ci_lower, a.bootstrap.ci_upper
    np.testing.assert_allclose((hi - lo) / 2, 1.959963984540054 * a.bootstrap.se, rtol=1e-12)
    assert 0.0 <= a.bootstrap.rd_p_value(a.relative_difference) <= 1.0


def test_bootstrap_fixed_pi_and_percentile():
    _, sim = _synthetic(seed=7)
    res = bootstrap_inference(sim.dataset, sim.replicates, sim.scheme, "identity", n_resamples=60,
                              reestimate_pi=False, ci="percentile")
    assert not res.bootstrap.reestimate_pi and res.bootstrap.ci_method == "percentile"
    assert np.all(res.bootstrap.ci_lower < res.bootstrap.ci_upper)


def test_bootstrap_constant_response():
    _, sim = _synthetic(seed=8)
    data = Dataset(np.full(sim.w.size, 2.5), sim.w)
    res = bootstrap_inference(data, sim.replicates, sim.scheme, "identity", n_resamples=50)
    np.testing.assert_allclose(res.bootstrap.se, 0.0, atol=1e-12)


def test_bootstrap_needs_enough_resamples():
    _, sim = _synthetic(seed=9)
    with pytest.raises(DomainError):
        bootstrap_inference(sim.dataset, sim.replicates, sim.scheme, "identity", n_resamples=10)


@pytest.mark.slow
def test_known_pi_large_sample_reduces_bias():
    cfg, sim = _synthetic(seed=10, n=100_000, nsr=0.8, J=5)
    prm = ErrorModelParams(cfg.lam, cfg.mu_lambda_x, cfg.sigma2_lambda_x, sim.sigma2_u)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        pi, p = estimate_pi_p(prm, sim.scheme)
    truth = true_theta(cfg)
    res = simfex_estimate(sim.dataset, sim.scheme, "identity", pi, p)
    true_rd = truth[-1] - truth[0]
    assert abs(res.relative_difference - true_rd) < abs(res.naive.relative_difference - true_rd)


def test_naive_map_agrees_with_matrix():
    pi, p = misclass_matrix(nsr=0.8, J=5)
    theta = np.linspace(0, 1, 5)
    np.testing.assert_array_equal(naive_map(pi, p, theta), naive_map_matrix(pi, p) @ theta)


@pytest.mark.slow
@pytest.mark.skipif(not os.environ.get("SIMFEX_LONG_EXAMPLES"), reason="set SIMFEX_LONG_EXAMPLES=1 (hours)")
def test_bootstrap_coverage_long():
    from simfex.simulate import run_study

    rep = run_study(GenConfig.default("normal", "linear"), 500, methods=("simfex",), boot_resamples=500,
                    parallelism=os.cpu_count() or 1)
    cov = rep.row("simfex", "theta_3-theta_1").coverage
    assert 0.92 <= cov <= 0.97
