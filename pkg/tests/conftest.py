import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from simfex.error_model import ErrorModelParams
from simfex.exceptions import EstimationWarning
from simfex.misclass import CategoryScheme, estimate_pi_p, normal_quantile_cutpoints

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def misclass_matrix(nsr=1.0, J=3, lam=1.0, mu=10.0, s2x=4.0):
    """Analytic (pi, p) for quantile categories of a Box-Cox normal X."""
    scheme = normal_quantile_cutpoints(lam, mu, s2x ** 0.5, J)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        res = estimate_pi_p(ErrorModelParams(lam, mu, s2x, nsr * s2x), scheme)
    return res.pi, res.p


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def scheme3():
    return CategoryScheme([9.0, 11.0])


@pytest.fixture(scope="session")
def sweep_matrices():
    """Analytic ``(case, pi, p)`` over the lambda x NSR x J sweep."""
    from .oracles import sweep_cases

    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        for case in sweep_cases():
            res = estimate_pi_p(ErrorModelParams(case["lam"], case["mu"], case["s2x"], case["s2u"]),
                                CategoryScheme(case["cuts"]))
            out.append((case, res.pi, res.p))
    return out
