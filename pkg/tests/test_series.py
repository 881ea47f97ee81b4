import math

import numpy as np
import pytest
from scipy import special

from levysmooth.series import (
    dyadic_checkpoints,
    log_factorials,
    poisson_log_pmf,
    scan_terms,
    stirling_log_factorial,
)


def test_log_factorials_match_gammaln():
    lf = log_factorials(5000)
    np.testing.assert_allclose(lf, special.gammaln(np.arange(5001) + 1), rtol=1e-12, atol=1e-12)
    assert lf[:4].tolist() == [0.0, 0.0, math.log(2), math.log(6)]


def test_stirling_accurate_from_20():
    n = np.arange(20, 3000)
    err = np.abs(stirling_log_factorial(n) - log_factorials(2999)[20:])
    assert err.max() < 1e-8


def test_poisson_pmf_sums_to_one():
    for lam in (0.5, 2.0, 30.0):
        p = np.exp(poisson_log_pmf(lam, 400))
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.sum(np.arange(401) * p) == pytest.approx(lam, rel=1e-12)


def test_checkpoints():
    assert dyadic_checkpoints(40) == [2, 4, 8, 16, 32]


def _terms(fn, m):
    n = np.arange(m + 1, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = fn(n)
    t[:2] = 0.0
    return t


@pytest.mark.parametrize(
    "fn, status",
    [
        (lambda n: 1 / n, "divergent"),
        (lambda n: 1 / n**2, "finite"),
        (lambda n: 1 / (n * np.log(n) ** 2), "finite"),
        (lambda n: np.exp(-n), "finite"),
        (lambda n: np.ones_like(n), "divergent"),
    ],
)
def test_decision_rule(fn, status):
    assert scan_terms(_terms(fn, 1 << 20)).status == status


def test_overflow_is_divergent():
    t = np.full(100, 1e308)
    assert scan_terms(t).status == "divergent"


def test_iterated_log_divergence_is_beyond_the_rule():
    # sum 1/(n ln n) grows like ln ln m; its dyadic increments shrink, so the
    # rule reports finite. Divergence this slow needs an analytic certificate.
    assert scan_terms(_terms(lambda n: 1 / (n * np.log(n)), 1 << 20)).status == "finite"
