import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import special_ortho_group

from cpnfym.bundle import (
    AlgForm,
    Flat,
    KahlerAbelian,
    LocalBundle,
    NonabelianTest,
    Perturbed,
    adjoint_pair,
    alg_bracket,
    alg_inner,
    bochner_residual,
    curvature,
    form_norm,
    random_bump_form,
    random_so,
    rotation_generator,
    rough_laplacian,
    rough_laplacian_frame,
    second_bianchi_residual,
    t_expansion_check,
)
from cpnfym.geometry import ChartPoint, LocalGeometry
from cpnfym.jets import Jet
from cpnfym.quadrature import support_quadrature

KINDS = [Flat(3), KahlerAbelian(1.5, 3), NonabelianTest(1.0, 0.5, 3), NonabelianTest(2.0, 0.7, 2)]


def potential_array(C, x):
    return C.potential(Jet.variables(x, 0)).value


def curvature_fd(C, x, h=1e-5):
    m = len(x)
    A = potential_array(C, x)
    dA = np.zeros((m,) + A.shape)  # dA[a, b] = d_a A_b
    for a in range(m):
        e = np.zeros(m)
        e[a] = h
        dA[a] = (potential_array(C, x + e) - potential_array(C, x - e)) / (2 * h)
    br = np.einsum("apr,brq->abpq", A, A) - np.einsum("bpr,arq->abpq", A, A)
    return dA - np.swapaxes(dA, 0, 1) + br


@pytest.mark.parametrize("C", KINDS[1:], ids=["kahler", "nonabelian-r3", "nonabelian-r2"])
def test_curvature_against_finite_differences(C, rng):
    for n in (1, 2):
        x = rng.normal(size=2 * n)
        R = curvature(C, ChartPoint.from_real(x)).components
        np.testing.assert_allclose(R, curvature_fd(C, x), atol=1e-8)


def test_flat_connection_has_zero_curvature(rng):
    assert np.abs(curvature(Flat(3), ChartPoint.from_real(rng.normal(size=4))).components).max() == 0.0


def test_kahler_abelian_is_kahler_form(rng):
    for n in (1, 2):
        for k in (0.5, 2.0):
            x = rng.normal(size=2 * n)
            p = ChartPoint.from_real(x)
            geo = LocalGeometry(x, 0)
            R = curvature(KahlerAbelian(k, 2), p)
            # R(X, Y) = g(X, J Y) (-k sigma_0)
            gJ = geo.g @ geo.J
            np.testing.assert_allclose(R.components, gJ[:, :, None, None] * (-k * rotation_generator(2)), atol=1e-10)
            assert abs(form_norm(R) ** 2 - 2 * n * k * k) < 1e-10


@pytest.mark.parametrize("C", KINDS, ids=["flat", "kahler", "nonabelian-r3", "nonabelian-r2"])
def test_second_bianchi(C, rng):
    for n in (1, 2):
        for _ in range(5):
            assert second_bianchi_residual(C, ChartPoint.from_real(rng.normal(size=2 * n))) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_ad_invariance(r, seed):
    g = np.random.default_rng(seed)
    a, b, c = random_so(g, r, (3,))
    assert abs(alg_inner(alg_bracket(a, b), c) - alg_inner(a, alg_bracket(b, c))) < 1e-12


def test_algform_validation():
    p = ChartPoint.origin(1)
    with pytest.raises(ValueError):
        AlgForm(1, np.zeros((3, 2, 2)), p)
    with pytest.raises(ValueError):
        AlgForm(4, np.zeros((2,) * 4 + (2, 2)), p)
    f = AlgForm(1, np.ones((2, 2, 2)), p)
    with pytest.raises(ValueError):
        f(np.ones(2), np.ones(2))


def test_d_nabla_squared_is_curvature_action(rng):
    C = NonabelianTest(1.0, 0.5, 3)
    phi = random_bump_form(rng, 1, 3, 0, radius=1.5, center=np.zeros(2))
    x = np.array([[0.2, -0.3]])
    lb = LocalBundle(C, x, 2)
    T = lb.field(phi)
    dd = lb.d(lb.d(T, 0), 1).value
    R = lb.R.truncate(0).value
    ph = T.truncate(0).value[:, None, None]
    np.testing.assert_allclose(dd, R @ ph - ph @ R, atol=1e-12)


@pytest.mark.parametrize("C", KINDS, ids=["flat", "kahler", "nonabelian-r3", "nonabelian-r2"])
@pytest.mark.parametrize("degree", [1, 2])
def test_bochner_weitzenbock(C, degree, rng):
    for _ in range(4):
        phi = random_bump_form(rng, 1, C.rank, degree)
        p = ChartPoint.from_real(phi.center + 0.3 * rng.uniform(-1, 1, size=2))
        assert bochner_residual(C, phi, p) < 1e-5


def test_bochner_rejects_degree_zero(rng):
    phi = random_bump_form(rng, 1, 2, 0)
    with pytest.raises(ValueError):
        bochner_residual(Flat(2), phi, ChartPoint.origin(1))


def test_rough_laplacian_is_frame_independent(rng):
    C = NonabelianTest(1.0, 0.5, 3)
    phi = random_bump_form(rng, 1, 3, 1, radius=1.5, center=np.zeros(2))
    p = ChartPoint.from_real([0.3, 0.1])
    a = rough_laplacian(C, phi, p).components
    b = rough_laplacian_frame(C, phi, p).components
    c = rough_laplacian_frame(C, phi, p, special_ortho_group.rvs(2, random_state=rng)).components
    np.testing.assert_allclose(a, b, atol=1e-10)
    np.testing.assert_allclose(a, c, atol=1e-10)


@pytest.mark.parametrize("C", KINDS[1:3], ids=["kahler", "nonabelian-r3"])
@pytest.mark.parametrize("degree", [0, 1])
def test_adjointness(C, degree, rng):
    phi = random_bump_form(rng, 1, 3, degree, radius=1.0)
    psi = random_bump_form(rng, 1, 3, degree + 1, radius=1.0, center=phi.center)
    a, b = adjoint_pair(C, phi, psi, support_quadrature(phi.center, 1.0, 64))
    assert abs(a - b) < 1e-4 * abs(a)


def test_t_expansion(rng):
    for C in KINDS:
        for _ in range(5):
            B = random_bump_form(rng, 1, C.rank, 1)
            p = ChartPoint.from_real(B.center + 0.2 * rng.uniform(-1, 1, size=2))
            assert t_expansion_check(C, B, p, float(rng.uniform(-1, 1))) < 1e-9


def test_perturbed_connection_outside_support(rng):
    C = KahlerAbelian(1.0, 3)
    B = random_bump_form(rng, 1, 3, 1, radius=0.5, center=np.zeros(2))
    p = ChartPoint.from_real([2.0, 2.0])
    np.testing.assert_array_equal(curvature(Perturbed(C, B, 0.7), p).components, curvature(C, p).components)
