import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import ortho_group

from cpnfym.bundle import AlgForm, Flat, GaugeDirection, KahlerAbelian, NonabelianTest, curvature, random_bump_form, rotation_generator
from cpnfym.fym import (
    Exponential,
    Linear,
    Power,
    ProfileDomainError,
    RegularizedPower,
    classify,
    djv_family_sums,
    el_residual,
    el_split_discrepancy,
    equality_case_crossing,
    equality_case_curvature,
    estimate_arrays,
    frak_R_bound_constant,
    frame_J,
    functional,
    functional_second_derivative_fd,
    gap_random_checks,
    gap_threshold,
    j_terms,
    j_terms_integral,
    j_terms_integral_basis,
    killing_sums,
    lap_identity_residual,
    power_threshold,
    random_curvature,
    sample_nodes,
    second_variation,
    second_variation_killing,
    second_variation_terms,
    stability_condition,
    stability_report,
    sum_j4_closed_form,
    sum_j4_integral,
    variation_field,
)
from cpnfym.geometry import ChartPoint
from cpnfym.killing import su_basis
from cpnfym.quadrature import make_quadrature, support_quadrature, volume_cpn

PROFILES = [Linear(), Power(1.7), RegularizedPower(0.6, 1e-3), Exponential()]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(PROFILES), st.floats(0.2, 3.0))
def test_profile_derivatives_match_finite_differences(F, x):
    h = 1e-5
    f0, f1, f2 = F.derivs(x, 2)
    assert abs(f1 - (F(x + h) - F(x - h)) / (2 * h)) < 1e-6 * max(1.0, abs(f1))
    assert abs(f2 - (F.d1(x + h) - F.d1(x - h)) / (2 * h)) < 1e-6 * max(1.0, abs(f2))


def test_power_domain():
    with pytest.raises(ProfileDomainError):
        Power(0.5).derivs(np.array([0.0, 1.0]))
    assert float(RegularizedPower(0.5)(0.0)) == 0.0
    assert float(Power(2.5)(0.0)) == 0.0


def test_functional_on_constant_curvature():
    # |R|^2 = 2 n k^2, so the functional is Vol F(n k^2)
    for n, res in ((1, 48), (2, 16)):
        Q = make_quadrature(n, res)
        for F in (Linear(), Power(1.5)):
            k = 1.5
            val = float(F(n * k * k))
            assert abs(functional(KahlerAbelian(k, 2), F, Q) - Q.volume() * val) < 1e-10 * Q.volume() * val
            assert abs(functional(KahlerAbelian(k, 2), F, Q) - volume_cpn(n) * val) <= Q.tolerance * val


def test_euler_lagrange(rng):
    for n in (1, 2):
        for _ in range(3):
            p = ChartPoint.from_real(rng.normal(size=2 * n))
            for F in (Linear(), Power(2 / 3), Power(0.25), Exponential()):
                assert el_residual(KahlerAbelian(1.0, 3), F, p) < 1e-8
            C = NonabelianTest(1.0, 0.5, 3)
            assert el_residual(C, Linear(), p) > 1e-3
            assert el_split_discrepancy(C, RegularizedPower(1.5), p) < 1e-6


CASES = [
    (KahlerAbelian(2.0, 3), Linear()),
    (KahlerAbelian(1.0, 3), Power(2 / 3)),
    (NonabelianTest(1.0, 0.5, 3), RegularizedPower(1.5)),
    (NonabelianTest(1.0, 0.5, 2), Exponential()),
    (Flat(3), Linear()),
]


@pytest.mark.parametrize("C,F", CASES)
def test_second_variation_matches_finite_differences(C, F, rng):
    B = random_bump_form(rng, 1, C.rank, 1, radius=1.0)
    Q = support_quadrature(B.center, 1.0, 64)
    fd = functional_second_derivative_fd(C, F, B, Q)
    assert abs(second_variation(C, F, B, Q, method="direct") - fd) < 1e-4 * abs(fd)
    assert abs(second_variation(C, F, B, Q, method="ibp") - fd) < 1e-4 * abs(fd)


def test_second_variation_method_validation(rng):
    B = random_bump_form(rng, 1, 2, 1)
    with pytest.raises(ValueError):
        second_variation(Flat(2), Linear(), B, support_quadrature(B.center, 1.0, 4), method="other")


def test_gauge_directions_are_null(rng):
    C = KahlerAbelian(1.0, 3)
    for F in (Linear(), Power(0.5)):
        phi0 = random_bump_form(rng, 1, 3, 0, radius=1.0)
        t = second_variation_terms(C, F, GaugeDirection(C, phi0), support_quadrature(phi0.center, 1.0, 64))
        assert abs(t.total) < 1e-4 * t.abs_scale
        B = random_bump_form(rng, 1, 3, 1, radius=1.0)
        assert abs(second_variation(C, F, B, support_quadrature(B.center, 1.0, 64))) > 1e-2


def test_killing_sums_pointwise(rng):
    basis = su_basis(2)
    for C, F in ((NonabelianTest(1.0, 0.5, 3), RegularizedPower(1.5)), (KahlerAbelian(1.0, 2), Power(0.5))):
        for _ in range(2):
            p = ChartPoint.from_real(rng.uniform(-1, 1, size=4))
            s = killing_sums(C, F, basis, p)
            assert abs(s.sum_j1) < 1e-6 * s.scale and abs(s.sum_j2) < 1e-6 * s.scale
            assert abs(s.sum_j4 - sum_j4_closed_form(curvature(C, p), F)) < 1e-8 * s.scale
            m = killing_sums(C, F, basis.recombine(ortho_group.rvs(len(basis), random_state=rng)), p)
            for f in ("sum_j1", "sum_j2", "sum_j3_pointwise", "sum_j4"):
                assert abs(getattr(s, f) - getattr(m, f)) < 1e-10 * s.scale


def test_j_terms_batch_matches_single(rng):
    C, F = NonabelianTest(1.0, 0.5, 3), RegularizedPower(1.5)
    basis = su_basis(1)
    Q = make_quadrature(1, 6)
    per = j_terms_integral_basis(C, F, basis, Q)
    one = j_terms_integral(C, F, basis[1], Q)
    np.testing.assert_allclose(per[1], [one.j1, one.j2, one.j3, one.j4], rtol=1e-12, atol=1e-14)
    t = j_terms(C, F, basis[1], ChartPoint.from_real([0.3, -0.2]))
    assert np.isfinite(t.total)


def test_reassembly_and_global_identity_n1():
    C, F = KahlerAbelian(2.0, 2), Power(0.75)
    basis = su_basis(1)
    Q = make_quadrature(1, 48)
    per = j_terms_integral_basis(C, F, basis, Q)
    L = second_variation_killing(C, F, basis, Q.restrict(1e3))
    assert np.max(np.abs(L - per.sum(axis=1))) < 1e-3 * np.max(np.abs(L))
    assert abs(per[:, 2].sum()) < 1e-4 * np.abs(per).sum()
    assert abs(L.sum() - sum_j4_integral(C, F, Q.restrict(1e3))) < 1e-3 * abs(L.sum())


def test_desk_number_and_closed_form():
    # |R|^2 = 8 constant, Q1 = 8 |R|^2 at the equality case: 2 pi * 64 = 128 pi
    C = KahlerAbelian(2.0, 2)
    Q = make_quadrature(1, 64)
    total = float(np.sum(second_variation_killing(C, Linear(), su_basis(1), Q)))
    assert abs(total - 128 * math.pi) < 1e-3 * 128 * math.pi


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 3), st.integers(2, 4), st.integers(0, 2**31 - 1))
def test_estimate_bounds(n, r, seed):
    Rf = random_curvature(np.random.default_rng(seed), n, r, 200)
    e = estimate_arrays(Rf, frame_J(n))
    np.testing.assert_allclose(e.r_norm2, 1.0)
    assert np.all(e.q1 <= (4 + 4 * n) * e.r_norm2 * (1 + 1e-12))
    assert np.all(e.q2 >= (4 + 4 / n) * e.r_norm2**2 * (1 - 1e-12))


def test_estimate_terms_against_loops(rng):
    n, r = 2, 3
    Rf = random_curvature(rng, n, r, 1)[0]
    J = frame_J(n)
    m = 2 * n
    norm2 = 0.5 * sum(np.sum(Rf[i, j] ** 2) for i in range(m) for j in range(m))
    RJ = lambda i, j: sum(J[a, i] * J[b, j] * Rf[a, b] for a in range(m) for b in range(m))  # noqa: E731
    cross = sum(np.sum(Rf[i, j] * RJ(i, j)) for i in range(m) for j in range(m))
    tr = sum(sum(J[a, i] * Rf[i, a] for a in range(m)) for i in range(m))
    G = np.array([[sum(np.sum(Rf[i, k] * Rf[j, k]) for k in range(m)) for j in range(m)] for i in range(m)])
    GJ = J.T @ G @ J
    e = estimate_arrays(Rf[None], J)
    assert abs(e.q1[0] - (2 * norm2 + cross + np.sum(tr**2))) < 1e-12
    assert abs(e.q2[0] - (4 * norm2**2 + np.sum(G * G) + np.sum(G * GJ))) < 1e-12


def test_equality_case(rng):
    for n in (1, 2, 3):
        sig = rng.normal(size=(3, 3))
        sig = sig - sig.T
        e = estimate_arrays(equality_case_curvature(n, sig)[None], frame_J(n))
        assert abs(e.q1[0] - (4 + 4 * n) * e.r_norm2[0]) < 1e-10 * e.r_norm2[0]
        assert abs(e.q2[0] - (4 + 4 / n) * e.r_norm2[0] ** 2) < 1e-10 * e.r_norm2[0] ** 2
        assert e.equality_residual[0] < 1e-12


def test_thresholds():
    assert abs(gap_threshold(2) - 3 * math.sqrt(3) / 4) < 1e-12
    assert abs(gap_threshold(3) * frak_R_bound_constant(3) - 5) < 1e-12
    with pytest.raises(ValueError):
        gap_threshold(1)
    assert power_threshold(1) == pytest.approx(2 / 3)
    assert equality_case_crossing(1) == 0.5
    # the pointwise stability condition vanishes at the power threshold
    a = power_threshold(2)
    x = 0.7
    assert abs(stability_condition(Power(a), x, 2) / (a * x ** (a - 1))) < 1e-12


def test_crossing_closed_form():
    # x Q1 + (alpha - 1) Q2 = 0 at the equality case gives alpha = 1 - n/2
    for n in (1, 2, 3):
        R = equality_case_curvature(n, rotation_generator(2))
        e = estimate_arrays(R[None], frame_J(n))
        x = 0.5 * e.r_norm2[0]
        assert abs(1 - x * e.q1[0] / e.q2[0] - equality_case_crossing(n)) < 1e-12


def test_family_identities_at_origin(rng):
    for n in (1, 2, 3):
        origin = ChartPoint.origin(n)
        forms = [curvature(NonabelianTest(1.0, 0.5, 3), origin)]
        forms += [AlgForm(2, 2.0 * Rf, origin) for Rf in random_curvature(rng, n, 3, 3)]
        for R in forms:
            for fam in djv_family_sums(R):
                assert abs(fam.computed - fam.expected) < 1e-8 * max(1.0, abs(fam.expected))


def test_gap_identities_on_random_tensors(rng):
    for n in (2, 3):
        g = gap_random_checks(rng, n, 3, samples=2000)
        assert np.max(g.ric_identity_residual(n)) < 1e-8
        assert np.max(g.two_r_expansion_residual) < 1e-8
        assert np.all(g.frak_margin(n) > -1e-10)


def test_two_r_term_on_kahler_form_curvature():
    # for R = omega sigma the expansion gives <R o 2R, R> = -(2n + 2)|R|^2
    from cpnfym.fym import frame_geometry, gap_checks_frame

    for n in (2, 3):
        Rmf, Jf = frame_geometry(n)
        Rf = equality_case_curvature(n, rotation_generator(3))
        g = gap_checks_frame(Rf[None], Rmf, Jf)
        assert abs(g.two_r_term[0] + (2 * n + 2) * g.norm2[0]) < 1e-12 * g.norm2[0]


def test_laplacian_identity(rng):
    x = rng.uniform(-1, 1, size=(5, 4))
    for F in (Linear(), RegularizedPower(1.5), Exponential()):
        assert np.max(lap_identity_residual(NonabelianTest(1.0, 0.3, 3), F, x)) < 1e-5


def test_stability_report_and_classification():
    Q = make_quadrature(1, 24)
    basis = su_basis(1)
    rep = stability_report(KahlerAbelian(2.0, 2), Linear(), basis, Q)
    assert rep.classification == "inconclusive/consistent-with-stability"
    assert rep.condition_signs["positive"] == len(Q)
    rep = stability_report(KahlerAbelian(2.0, 2), Power(0.25), basis, Q)
    assert rep.classification == "instability certificate"
    with pytest.warns(RuntimeWarning):
        stability_report(NonabelianTest(1.0, 0.5, 3), Linear(), basis, Q)
    assert classify([1.0, 2.0], -5.0, 1e-6) == "average-nonpositive"
    assert set(rep.as_dict()) >= {"per_v", "total", "classification"}


def test_variation_field_is_contraction(rng):
    C = NonabelianTest(1.0, 0.5, 3)
    V = su_basis(1)[0]
    B = variation_field(C, V)
    assert B.degree == 1 and B.loss == 1
    Q = support_quadrature([0.0, 0.0], 0.5, 8)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert np.isfinite(second_variation(C, Linear(), B, Q))


def test_sample_nodes_are_near_origin():
    Q = make_quadrature(2, 8)
    x = sample_nodes(Q, 10)
    assert len(x) == 10 and np.all(np.sum(x * x, axis=1) <= 4.0)
