import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpnfym import jets
from cpnfym.jets import Jet

coords = st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2).map(np.array)


def test_variables_and_truncation():
    X = Jet.variables([0.3, -0.2], 3)
    assert X.shape == (2,)
    np.testing.assert_allclose(X.value, [0.3, -0.2])
    assert X.truncate(1).order == 1
    np.testing.assert_allclose(X.grad().value, np.eye(2))


def test_derivatives_of_closed_form_function():
    # f = exp(x y) / (1 + x^2); derivatives from the product and chain rules by hand
    x0, y0 = 0.4, -0.7
    X = Jet.variables([x0, y0], 2)
    f = (X[..., 0] * X[..., 1]).exp() / (1.0 + X[..., 0] * X[..., 0])
    e, d = math.exp(x0 * y0), 1 + x0 * x0
    fx = y0 * e / d - 2 * x0 * e / d**2
    fy = x0 * e / d
    fyy = x0 * x0 * e / d
    np.testing.assert_allclose(f.value, e / d, rtol=1e-14)
    np.testing.assert_allclose(f.derivative(0), fx, rtol=1e-13)
    np.testing.assert_allclose(f.derivative(1), fy, rtol=1e-13)
    np.testing.assert_allclose(f.derivative(1, 1), fyy, rtol=1e-13)


def test_mixed_partials_against_finite_differences():
    def fn(v):
        return np.sin(v[0]) * v[1] ** 3 + np.exp(v[0] * v[1])

    x0 = np.array([0.2, 0.9])
    X = Jet.variables(x0, 2)
    s = X[..., 0].compose([np.sin(x0[0]), np.cos(x0[0]), -np.sin(x0[0])])
    f = s * X[..., 1] ** 3 + (X[..., 0] * X[..., 1]).exp()
    h = 1e-4
    fd = (fn(x0 + [h, h]) - fn(x0 + [h, -h]) - fn(x0 + [-h, h]) + fn(x0 - [h, h])) / (4 * h * h)
    assert abs(f.derivative(0, 1) - fd) < 1e-6


@settings(max_examples=40, deadline=None)
@given(coords)
def test_product_rule(x0):
    X = Jet.variables(x0, 3)
    a = (X[..., 0] * 0.7).exp() + X[..., 1] ** 2
    b = (1.0 + X[..., 0] ** 2 + X[..., 1] ** 2).reciprocal()
    lhs = (a * b).grad()
    rhs = a.grad() * b.expand_dims(-1) + a.expand_dims(-1) * b.grad()
    np.testing.assert_allclose(lhs.c, rhs.c, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(coords)
def test_reciprocal_and_sqrt(x0):
    X = Jet.variables(x0, 3)
    u = 2.0 + X[..., 0] ** 2 + 0.5 * X[..., 1]
    one = u * u.reciprocal()
    np.testing.assert_allclose(one.c[..., 0], 1.0)
    np.testing.assert_allclose(one.c[..., 1:], 0.0, atol=1e-12)
    r = u.sqrt()
    np.testing.assert_allclose((r * r).c, u.c, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(coords)
def test_matrix_inverse_and_matmul(x0):
    X = Jet.variables(x0, 2)
    a, b = X[..., 0], X[..., 1]
    M = jets.stack([jets.stack([2.0 + a * a, b], -1), jets.stack([b, 3.0 + a * b], -1)], -2)
    I = jets.matmul(jets.inv(M), M)
    np.testing.assert_allclose(I.value, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(I.c[..., 1:], 0.0, atol=1e-11)


def test_einsum_matches_numpy_on_values():
    rng = np.random.default_rng(1)
    X = Jet.variables(rng.normal(size=3), 2)
    A = rng.normal(size=(3, 3))
    y = jets.einsum("ij,j->i", A, X)
    np.testing.assert_allclose(y.value, A @ X.value)
    np.testing.assert_allclose(y.grad().value, A)


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        Jet.variables([0.0, 1.0], 1) + Jet.variables([0.0, 1.0, 2.0], 1)[..., :2]


def test_order_zero_cannot_be_differentiated():
    with pytest.raises(ValueError):
        Jet.variables([0.0], 0).grad()
