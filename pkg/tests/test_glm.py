import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special

from simfex import glm
from simfex.exceptions import DataError, DomainError
from simfex.glm import Dataset, build_design, fit, fit_categories
from simfex.misclass import CategoryScheme


def _cells(seed, J=4, n=400, binary=False):
    rng = np.random.default_rng(seed)
    cats = np.r_[np.arange(J), rng.integers(0, J, n - J)]
    if binary:
        prob = rng.uniform(0.15, 0.85, J)[cats]
        y = (rng.random(n) < prob).astype(float)
        # keep each cell strictly inside (0, 1)
        for j in range(J):
            idx = np.flatnonzero(cats == j)[:2]
            y[idx] = [0.0, 1.0]
    else:
        y = rng.normal(size=n) + cats
    return y, cats


def build_design_from(cats, J):
    return np.eye(J)[cats]


def _cell_means(y, cats, J):
    return np.array([y[cats == j].mean() for j in range(J)])


def test_design_indicator_block():
    scheme = CategoryScheme([2.0, 3.0])
    x = build_design([3.5, 1.0, 2.5], scheme)
    np.testing.assert_array_equal(x, [[0, 0, 1], [1, 0, 0], [0, 1, 0]])
    z = np.arange(3.0)
    xz = build_design([3.5, 1.0, 2.5], scheme, z)
    assert xz.shape == (3, 4)
    np.testing.assert_array_equal(xz[:, 3], z)


def test_design_rows_sum_to_one(rng):
    scheme = CategoryScheme([0.5, 1.0, 2.0])
    w = rng.exponential(size=300) + 1e-3
    np.testing.assert_array_equal(build_design(w, scheme).sum(axis=1), 1.0)


def test_design_empty_category():
    with pytest.raises(DataError, match=r"\[1\]"):
        build_design([1.0, 5.0], CategoryScheme([2.0, 3.0]))


@pytest.mark.parametrize("seed", range(5))
def test_identity_group_means(seed):
    y, cats = _cells(seed)
    res = fit_categories(y, cats, 4, link="identity")
    np.testing.assert_array_equal(res.theta, _cell_means(y, cats, 4))
    assert res.converged and not res.flagged


@pytest.mark.parametrize("link,g", [("logit", special.logit), ("probit", special.ndtri)])
@pytest.mark.parametrize("seed", range(5))
def test_binary_closed_form(link, g, seed):
    y, cats = _cells(seed, binary=True)
    res = fit_categories(y, cats, 4, link=link)
    np.testing.assert_allclose(res.theta, g(_cell_means(y, cats, 4)), rtol=0, atol=1e-6)


@pytest.mark.parametrize("link", ["logit", "probit"])
def test_irls_matches_closed_form(link):
    y, cats = _cells(3, binary=True)
    closed = fit_categories(y, cats, 4, link=link)
    with_z = glm._fit_irls(y, build_design_from(cats, 4), 4, link)
    np.testing.assert_allclose(with_z.theta, closed.theta, rtol=0, atol=1e-6)
    np.testing.assert_allclose(with_z.se, closed.se, rtol=1e-5)
    assert with_z.converged


def test_orthogonal_covariate_leaves_theta(rng):
    y, cats = _cells(7)
    z = rng.normal(size=y.size)
    for j in range(4):
        m = cats == j
        z[m] -= z[m].mean()
    base = fit_categories(y, cats, 4, link="identity")
    res = fit_categories(y, cats, 4, z, link="identity")
    np.testing.assert_allclose(res.theta, base.theta, rtol=0, atol=1e-8)


@pytest.mark.parametrize("link", ["identity", "logit", "probit"])
def test_row_permutation(link, rng):
    y, cats = _cells(11, binary=link != "identity")
    z = rng.normal(size=(y.size, 2))
    perm = rng.permutation(y.size)
    a = fit_categories(y, cats, 4, z, link)
    b = fit_categories(y[perm], cats[perm], 4, z[perm], link)
    np.testing.assert_allclose(b.theta, a.theta, rtol=0, atol=1e-12)
    np.testing.assert_allclose(b.theta_z, a.theta_z, rtol=0, atol=1e-12)


@given(st.integers(0, 10 ** 6))
def test_closed_form_property(seed):
    y, cats = _cells(seed, J=3, n=120, binary=True)
    res = fit_categories(y, cats, 3, link="logit")
    np.testing.assert_allclose(res.theta, special.logit(_cell_means(y, cats, 3)), rtol=0, atol=1e-6)


def test_logit_recovers_coefficients():
    rng = np.random.default_rng(5)
    n = 20000
    cats = rng.integers(0, 3, n)
    z = rng.normal(size=n)
    eta = np.array([-1.0, 0.0, 0.5])[cats] + 0.7 * z
    y = (rng.random(n) < special.expit(eta)).astype(float)
    res = fit_categories(y, cats, 3, z, "logit")
    assert res.converged
    assert np.all(np.abs(res.theta - [-1.0, 0.0, 0.5]) < 4 * res.se)
    assert abs(res.theta_z[0] - 0.7) < 4 * res.se_z[0]


def test_ols_standard_errors(rng):
    y, cats = _cells(2)
    res = fit_categories(y, cats, 4, link="identity")
    resid = y - res.theta[cats]
    s2 = resid @ resid / (y.size - 4)
    np.testing.assert_allclose(res.se, np.sqrt(s2 / np.bincount(cats)), rtol=1e-12)


def test_separation_flagged():
    cats = np.repeat([0, 1, 2], 20)
    y = np.r_[np.zeros(20), np.tile([0.0, 1.0], 10), np.ones(20)]
    res = fit_categories(y, cats, 3, link="logit")
    assert res.separation and res.flagged
    z = np.linspace(-1, 1, 60)
    res_z = fit_categories(y, cats, 3, z, link="probit")
    assert res_z.flagged


def test_fit_uses_scheme():
    scheme = CategoryScheme([2.0])
    data = Dataset([1.0, 2.0, 3.0, 5.0], [1.0, 1.5, 2.5, 3.0])
    res = fit(data, scheme, "identity")
    np.testing.assert_array_equal(res.theta, [1.5, 4.0])
    assert res.relative_difference == 2.5


def test_input_validation():
    with pytest.raises(DataError):
        fit_categories([0.0, 0.5, 1.0], [0, 1, 1], 2, link="logit")
    with pytest.raises(DomainError):
        fit_categories([0.0, 1.0], [0, 1], 2, link="cloglog")
    with pytest.raises(DataError):
        Dataset([1.0, 2.0], [1.0])
    with pytest.raises(DataError):
        fit_categories([1.0, 2.0], [0, 0], 2)
