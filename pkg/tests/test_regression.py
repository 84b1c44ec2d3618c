import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tigames.errors import RegressionError, SpecError
from tigames.regression import (Projector, RegressionBasis, ols_standard_errors,
                                regress_conditional_expectation)


def test_basis_layout():
    b = RegressionBasis(2)
    assert b.exponents == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert RegressionBasis(2, use_mean=False).size == 3
    with pytest.raises(SpecError):
        RegressionBasis(5)
    with pytest.raises(SpecError):
        RegressionBasis(2, ridge=-1.0)


@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
@settings(max_examples=40)
def test_projector_reproduces_basis_polynomials(coef, ):
    rng = np.random.default_rng(0)
    own, mean = rng.normal(size=200), rng.normal(size=200)
    b = RegressionBasis(2)
    design = b.features(own, mean)
    target = design @ np.array(coef)
    proj = Projector(design)
    assert np.allclose(proj.fit(target), target, atol=1e-8 * (1 + np.abs(target).max()))
    assert np.allclose(design @ proj.raw_coefficients(target), target, atol=1e-8 * (1 + np.abs(target).max()))


def test_projector_drops_constant_columns():
    own = np.linspace(-1, 1, 50)
    design = RegressionBasis(2).features(own, np.zeros_like(own))
    proj = Projector(design)
    assert proj.keep.tolist() == [1, 3]
    raw = proj.raw_coefficients(1 + 2 * own)
    assert raw[0] == pytest.approx(1) and raw[1] == pytest.approx(2)
    assert raw[2] == 0 and raw[4] == 0 and raw[5] == 0


def test_projector_needs_samples():
    with pytest.raises(RegressionError):
        Projector(np.column_stack([np.ones(2), [0.0, 1.0], [1.0, 0.0]]))


def test_ridge_regression_and_rank_deficiency():
    x = np.column_stack([np.ones(10), np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(RegressionError) as info:
        regress_conditional_expectation(np.arange(10.0), x)
    assert info.value.condition_number > 1e14
    coef, fitted = regress_conditional_expectation(np.arange(10.0), x, ridge=1e-6)
    assert np.allclose(fitted, np.arange(10.0), atol=1e-4)


def test_hc0_standard_errors_match_sandwich_formula():
    rng = np.random.default_rng(3)
    x = np.column_stack([np.ones(500), rng.normal(size=500)])
    y = 1 + 2 * x[:, 1] + rng.normal(size=500) * (1 + np.abs(x[:, 1]))
    coef, se = ols_standard_errors(y, x)
    bread = np.linalg.inv(x.T @ x)
    beta = bread @ x.T @ y
    resid = y - x @ beta
    cov = bread @ (x.T * resid**2) @ x @ bread
    assert np.allclose(coef, beta)
    assert np.allclose(se, np.sqrt(np.diag(cov)), rtol=1e-8)
