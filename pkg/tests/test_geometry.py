import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from cpnfym.geometry import (
    ChartPoint,
    LocalGeometry,
    complex_structure,
    curvature_identity_iii,
    curvature_table_z0,
    fs_metric,
    inner,
    orthonormal_frame,
    ricci,
    riemann,
    riemann_frame,
    volume_density,
)
from cpnfym.quadrature import make_quadrature, support_quadrature, volume_cpn


def metric_closed_form(x):
    """Real Fubini-Study metric 2 Re h, h = I/s - conj(z) z^T / s^2, straight from the formula."""
    n = len(x) // 2
    z = x[:n] + 1j * x[n:]
    s = 1.0 + np.vdot(z, z).real
    h = np.eye(n) / s - np.outer(z.conj(), z) / s**2
    return 2.0 * np.block([[h.real, h.imag], [-h.imag, h.real]])


def christoffel_fd(x, h=1e-5):
    m = len(x)
    dg = np.zeros((m, m, m))
    for c in range(m):
        e = np.zeros(m)
        e[c] = h
        dg[:, :, c] = (metric_closed_form(x + e) - metric_closed_form(x - e)) / (2 * h)
    low = np.einsum("jli->lij", dg) + np.einsum("ilj->lij", dg) - np.einsum("ijl->lij", dg)
    return 0.5 * np.einsum("kl,lij->kij", np.linalg.inv(metric_closed_form(x)), low)


points = st.integers(1, 2).flatmap(lambda n: st.lists(st.floats(-2.0, 2.0), min_size=2 * n, max_size=2 * n)).map(np.array)


def test_chart_point_validation():
    with pytest.raises(ValueError):
        ChartPoint(np.array([np.nan]))
    p = ChartPoint.from_real([0.5, -1.0])
    assert p.n == 1 and p.z[0] == 0.5 - 1j
    np.testing.assert_allclose(p.x, [0.5, -1.0])


@settings(max_examples=30, deadline=None)
@given(points)
def test_metric_matches_closed_form(x):
    np.testing.assert_allclose(LocalGeometry(x, 0).g, metric_closed_form(x), atol=1e-14)
    np.testing.assert_allclose(np.sqrt(np.linalg.det(metric_closed_form(x))), volume_density(x), rtol=1e-12)


def test_christoffel_against_finite_differences(rng):
    for n in (1, 2):
        x = rng.normal(size=2 * n)
        np.testing.assert_allclose(fs_metric(ChartPoint.from_real(x)).christoffel, christoffel_fd(x), atol=1e-8)


def test_christoffel_vanishes_at_origin():
    for n in (1, 2, 3):
        assert np.abs(LocalGeometry(np.zeros(2 * n), 1).christoffel.value).max() < 1e-15


@settings(max_examples=30, deadline=None)
@given(points, st.integers(0, 2**31 - 1))
def test_j_is_isometry(x, seed):
    r = np.random.default_rng(seed)
    n = len(x) // 2
    g = LocalGeometry(x, 0).g
    J = complex_structure(n)
    X, Y = r.normal(size=(2, 2 * n))
    assert abs(inner(g, J @ X, J @ Y) - inner(g, X, Y)) < 1e-10 * (1 + abs(inner(g, X, X)) + abs(inner(g, Y, Y)))
    np.testing.assert_allclose(J @ J, -np.eye(2 * n))


def test_sectional_curvature_formula(rng):
    # constant holomorphic sectional curvature 2: K(X, Y) = (1 + 3 g(X, JY)^2) / 2 for orthonormal X, Y
    for n in (1, 2, 3):
        for _ in range(5):
            x = rng.normal(size=2 * n)
            p = ChartPoint.from_real(x)
            g = LocalGeometry(x, 0).g
            X, Y = rng.normal(size=(2, 2 * n))
            X /= math.sqrt(inner(g, X, X))
            Y -= inner(g, X, Y) * X
            Y /= math.sqrt(inner(g, Y, Y))
            K = inner(g, riemann(p, X, Y, Y), X)
            c = inner(g, X, complex_structure(n) @ Y)
            assert abs(K - 0.5 * (1 + 3 * c * c)) < 1e-9


def test_curvature_table_at_origin():
    for n in (1, 2, 3):
        assert np.abs(riemann_frame(ChartPoint.origin(n)) - curvature_table_z0(n)).max() < 1e-8


def test_first_bianchi(rng):
    for n in (1, 2):
        for _ in range(10):
            R = riemann_frame(rng.normal(size=2 * n))
            cyc = R + np.einsum("iklj->ijkl", R) + np.einsum("iljk->ijkl", R)
            assert np.abs(cyc).max() < 1e-8


def test_ricci_identities(rng):
    for n in (1, 2):
        for _ in range(10):
            x = rng.normal(size=2 * n)
            p = ChartPoint.from_real(x)
            X = rng.normal(size=2 * n)
            np.testing.assert_allclose(ricci(p, X), (n + 1) * X, atol=1e-8)
            np.testing.assert_allclose(curvature_identity_iii(p, X), -(n + 1) * X, atol=1e-8)


def test_orthonormal_frame_is_j_adapted(rng):
    x = rng.normal(size=4)
    g = LocalGeometry(x, 0).g
    E = orthonormal_frame(g)
    np.testing.assert_allclose(E @ g @ E.T, np.eye(4), atol=1e-12)
    np.testing.assert_allclose(E[2:], E[:2] @ complex_structure(2).T, atol=1e-14)
    np.testing.assert_allclose(orthonormal_frame(LocalGeometry(np.zeros(4), 0).g), np.eye(4) / math.sqrt(2))


def radial_volume(n):
    """Volume from the radial integral of 2^n / (1 + r^2)^(n+1) over R^2n."""
    sphere = 2 * math.pi**n / math.gamma(n)
    val, _ = quad(lambda r: 2.0**n * r ** (2 * n - 1) / (1 + r * r) ** (n + 1), 0, np.inf, epsabs=1e-13, epsrel=1e-12)
    return sphere * val


def test_volume_formula_against_radial_oracle():
    for n in (1, 2, 3):
        assert abs(volume_cpn(n) - radial_volume(n)) < 1e-10


def test_quadrature_volume_and_declared_tolerance():
    for n in (1, 2):
        Q = make_quadrature(n)
        assert abs(Q.volume() - volume_cpn(n)) <= Q.tolerance


def test_quadrature_converges():
    errs = [abs(make_quadrature(1, m).volume() - volume_cpn(1)) for m in (8, 16, 32)]
    assert errs[0] > errs[1] > errs[2]
    order = math.log(errs[0] / errs[2]) / math.log(4)
    assert order > 4


def test_monte_carlo_rule_is_seeded():
    a = make_quadrature(1, 12, "monte_carlo", seed=3)
    b = make_quadrature(1, 12, "monte_carlo", seed=3)
    np.testing.assert_array_equal(a.nodes, b.nodes)
    assert abs(a.volume() - volume_cpn(1)) < a.tolerance


def test_quadrature_errors():
    with pytest.raises(ValueError):
        make_quadrature(0)
    with pytest.raises(ValueError):
        make_quadrature(1, scheme="simpson")
    with pytest.raises(ValueError):
        make_quadrature(1, 0)


def test_restricted_rule_accounts_for_dropped_weight():
    Q = make_quadrature(1, 32)
    R = Q.restrict(10.0)
    assert len(R) < len(Q)
    assert abs(R.volume() - volume_cpn(1)) <= R.tolerance


def test_support_rule_matches_fine_reference():
    Q = support_quadrature([0.1, -0.2], 0.5, 16)
    # the box rule reproduces integral of sqrt(det g) over the box against a fine tensor rule
    s, w = np.polynomial.legendre.leggauss(200)
    xs, ys = 0.1 + 0.5 * s, -0.2 + 0.5 * s
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    ref = np.sum(np.outer(w, w) * 0.25 * volume_density(np.stack([X, Y], -1)))
    assert abs(Q.volume() - ref) < 1e-10
