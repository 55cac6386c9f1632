import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastdiff.polynomial import (ReactionPolynomial, all_multi_indices, even_multi_indices,
                                 multi_factorial, multi_indices)

heat = ReactionPolynomial(1, {(1,): 1.0, (3,): -1.0})


def test_derivative_examples():
    assert heat.derivative((2,)).coeffs == {(1,): -6.0}
    F1 = ReactionPolynomial(2, {(1, 2): -2.0})
    assert F1.derivative((0, 2)).coeffs == {(1, 0): -4.0}
    assert heat.derivative((0,)) == heat
    assert heat.derivative((4,)).coeffs == {}


def test_evaluation_and_terms():
    assert heat(0.5) == pytest.approx(0.375)
    x = np.linspace(-1, 1, 5)
    np.testing.assert_allclose(heat(x), x - x**3)
    F = ReactionPolynomial.from_terms(2, [{"powers": [1, 2], "coeff": 1.5}, {"powers": [0, 0], "coeff": 1}])
    assert F(2.0, 3.0) == pytest.approx(28.0)
    b = np.array([[2.0, 3.0], [1.0, 1.0]])
    np.testing.assert_allclose(F(b), [28.0, 2.5])
    assert ReactionPolynomial.from_terms(2, F.to_terms()) == F
    assert F.degree == 3
    with pytest.raises(ValueError):
        ReactionPolynomial(1, {(1, 1): 1.0})
    with pytest.raises(ValueError):
        heat.derivative((1, 1))


def test_zero_coefficients_dropped():
    F = ReactionPolynomial(1, {(1,): 1.0}) + ReactionPolynomial(1, {(1,): -1.0})
    assert F.coeffs == {} and F.degree == 0


def test_multi_index_enumeration():
    assert sorted(multi_indices(2, 2)) == [(0, 2), (1, 1), (2, 0)]
    assert even_multi_indices(2, 3) == [(2, 0), (0, 2)]
    assert len(all_multi_indices(2, 3)) == 10
    assert multi_factorial((2, 3)) == 12


@given(st.dictionaries(st.tuples(st.integers(0, 3), st.integers(0, 3)),
                       st.floats(-2, 2, allow_nan=False), max_size=5),
       st.tuples(st.integers(0, 2), st.integers(0, 2)),
       st.tuples(st.floats(-1, 1), st.floats(-1, 1)))
@settings(max_examples=60, deadline=None)
def test_derivative_matches_finite_differences(coeffs, ell, point):
    F = ReactionPolynomial(2, coeffs)
    D = F.derivative(ell)
    # nested central differences of a polynomial of degree <= 6, step small
    h = 1e-3

    def diff(f, axis, order):
        if order == 0:
            return f
        g = diff(f, axis, order - 1)
        e = np.eye(2)[axis] * h
        return lambda x: (g(x + e) - g(x - e)) / (2 * h)

    f = lambda x: F(x[0], x[1])  # noqa: E731
    num = diff(diff(f, 0, ell[0]), 1, ell[1])(np.array(point))
    assert D(*point) == pytest.approx(num, abs=1e-4 * (1 + sum(abs(v) for v in coeffs.values())))


def test_lipschitz_bound():
    assert heat.lipschitz_bound(2.0) == pytest.approx(1 + 3 * 4)
