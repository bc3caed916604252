import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fehc.quadrature import gauss_line, quadrature_rule, reference_moment


def monomial_mean_numeric(rule, i, j):
    # weights sum to one, so this is the mean over the reference triangle
    x, y = rule.points[:, 1], rule.points[:, 2]
    return np.dot(rule.weights, x**i * y**j)


@given(st.integers(1, 10), st.data())
def test_triangle_rules_integrate_monomials_exactly(degree, data):
    rule = quadrature_rule(degree)
    i = data.draw(st.integers(0, degree))
    j = data.draw(st.integers(0, degree - i))
    assert monomial_mean_numeric(rule, i, j) == pytest.approx(reference_moment(i, j), rel=1e-13, abs=1e-16)


def test_degree_ten_x5y5_moment():
    # integral is the beta-function value 5! 5! / 12!; the triangle has area 1/2
    integral = math.factorial(5) ** 2 / math.factorial(12)
    assert 0.5 * reference_moment(5, 5) == pytest.approx(integral, rel=1e-15)
    assert 0.5 * monomial_mean_numeric(quadrature_rule(10), 5, 5) == pytest.approx(integral, rel=1e-14)


@pytest.mark.parametrize("degree", range(1, 11))
def test_rules_are_positive_and_interior(degree):
    rule = quadrature_rule(degree)
    assert rule.degree_exact >= degree
    assert np.all(rule.weights > 0)
    assert np.all(rule.points > 0)
    assert np.allclose(rule.points.sum(axis=1), 1.0)
    assert rule.weights.sum() == pytest.approx(1.0, rel=1e-14)


def test_rule_degree_out_of_range():
    with pytest.raises(ValueError):
        quadrature_rule(11)
    with pytest.raises(ValueError):
        quadrature_rule(0)


@given(st.integers(1, 12))
def test_gauss_line_is_exact_to_degree_2n_minus_1(n):
    x, w = gauss_line(n)
    for k in range(2 * n):
        assert np.dot(w, x**k) == pytest.approx(1.0 / (k + 1), rel=1e-13)
