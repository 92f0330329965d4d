"""Forms with values in the adjoint bundle of an SO(r) bundle over U_0.

Fibers are real antisymmetric r x r matrices with ``<a, b> = tr(a^T b)``.
A p-form is stored by its components on coordinate vectors, as an array of
shape ``(2n,)*p + (r, r)``, totally antisymmetric in the form slots.

Connections are ``nabla = d + A`` for an analytic potential ``A`` on U_0,
with curvature ``R = dA + 1/2 [A ^ A]`` and ``[B ^ B](X, Y) = 2 [B(X), B(Y)]``.

Field evaluation works on coordinate jets (see :mod:`cpnfym.jets`): a field
maps a coordinate jet of order ``k`` to a component jet of order
``k - field.loss``.  Covariant derivatives append the derivative slot last:
``(nabla T)[a1..ap, c] = (nabla_{d_c} T)(d_a1, .., d_ap)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations
from typing import Callable

import numpy as np

from . import jets
from .geometry import ChartPoint, LocalGeometry, ricci_operator
from .jets import Jet

_SLOTS = "abcdefgh"


# ---------------------------------------------------------------------------
# Lie algebra so(r)


def rotation_generator(r: int = 2) -> np.ndarray:
    """sigma_0: the rotation generator of the first two axes, |sigma_0|^2 = 2."""
    if r < 2:
        raise ValueError("rank must be >= 2")
    s = np.zeros((r, r))
    s[0, 1] = -1.0
    s[1, 0] = 1.0
    return s


def so_basis(r: int) -> np.ndarray:
    """L_ab = E_ba - E_ab for a < b; L_01 = sigma_0."""
    out = []
    for a in range(r):
        for b in range(a + 1, r):
            m = np.zeros((r, r))
            m[b, a] = 1.0
            m[a, b] = -1.0
            out.append(m)
    return np.array(out)


def antisymmetrize_matrix(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m - np.swapaxes(m, -1, -2))


def random_so(rng: np.random.Generator, r: int, size: tuple = ()) -> np.ndarray:
    return antisymmetrize_matrix(rng.standard_normal(size + (r, r)))


def alg_inner(phi, psi) -> float:
    """<phi, psi> = tr(phi^T psi)."""
    phi, psi = np.asarray(phi), np.asarray(psi)
    if phi.shape != psi.shape or phi.ndim != 2:
        raise ValueError(f"fiber shapes differ: {phi.shape} vs {psi.shape}")
    return float(np.sum(phi * psi))


def alg_bracket(a, b) -> np.ndarray:
    return a @ b - b @ a


# ---------------------------------------------------------------------------
# forms at a point


def antisymmetrize(T: np.ndarray, p: int) -> np.ndarray:
    """Project the first ``p`` axes of ``T`` onto totally antisymmetric tensors."""
    if p < 2:
        return np.asarray(T)
    out = np.zeros_like(T)
    for perm in permutations(range(p)):
        sign = np.linalg.det(np.eye(p)[list(perm)])
        out = out + sign * np.transpose(T, list(perm) + list(range(p, T.ndim)))
    return out / math.factorial(p)


@dataclass(frozen=True)
class AlgForm:
    """A g_E-valued p-form at a point, in coordinate components."""

    degree: int
    components: np.ndarray
    point: ChartPoint

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if not 0 <= self.degree <= 3:
            raise ValueError("form degree must be between 0 and 3")
        m = 2 * self.point.n
        if c.ndim != self.degree + 2 or c.shape[: self.degree] != (m,) * self.degree or c.shape[-1] != c.shape[-2]:
            raise ValueError(f"components of shape {c.shape} do not fit a {self.degree}-form on a {m}-manifold")
        object.__setattr__(self, "components", c)

    @property
    def rank(self) -> int:
        return self.components.shape[-1]

    def __call__(self, *vectors) -> np.ndarray:
        if len(vectors) != self.degree:
            raise ValueError(f"a {self.degree}-form takes {self.degree} vectors")
        out = self.components
        for v in vectors:
            out = np.tensordot(np.asarray(v, dtype=float), out, axes=(0, 0))
        return out

    def frame_components(self, frame: np.ndarray) -> np.ndarray:
        out = self.components
        for _ in range(self.degree):
            out = np.tensordot(frame, out, axes=(1, 0))
            out = np.moveaxis(out, 0, self.degree - 1)
        return out

    def _same(self, other: "AlgForm"):
        if not isinstance(other, AlgForm) or other.degree != self.degree:
            raise ValueError("forms of different degree")

    def __add__(self, other: "AlgForm") -> "AlgForm":
        self._same(other)
        return AlgForm(self.degree, self.components + other.components, self.point)

    def __sub__(self, other: "AlgForm") -> "AlgForm":
        self._same(other)
        return AlgForm(self.degree, self.components - other.components, self.point)

    def __mul__(self, s: float) -> "AlgForm":
        return AlgForm(self.degree, self.components * s, self.point)

    __rmul__ = __mul__


def frame_at(p: ChartPoint) -> np.ndarray:
    return LocalGeometry(p.x, 0).frame


def form_inner(phi: AlgForm, psi: AlgForm, frame: np.ndarray | None = None) -> float:
    """(1/p!) sum over frame index tuples of <phi(e_I), psi(e_I)>."""
    if phi.degree != psi.degree:
        raise ValueError("forms of different degree")
    E = frame_at(phi.point) if frame is None else frame
    a = phi.frame_components(E)
    b = psi.frame_components(E)
    return float(np.sum(a * b)) / math.factorial(phi.degree)


def form_norm(phi: AlgForm, frame: np.ndarray | None = None) -> float:
    return math.sqrt(max(form_inner(phi, phi, frame), 0.0))


def _raise_first(a: np.ndarray, ginv: np.ndarray, degree: int) -> np.ndarray:
    # cycle through the form slots raising each in turn
    idx = _SLOTS[:degree]
    out = a
    for s in range(degree):
        src = idx.replace(idx[s], "z")
        out = np.einsum(f"...{idx[s]}z,...{src}pq->...{idx}pq", ginv, out)
    return out


def form_inner_batch(a: np.ndarray, b: np.ndarray, ginv: np.ndarray, degree: int) -> np.ndarray:
    """<a, b> for coordinate components with batch axes; ``ginv`` has shape (..., m, m)."""
    if degree == 0:
        return np.sum(a * b, axis=(-2, -1))
    up = _raise_first(a, ginv, degree)
    return np.sum(up * b, axis=tuple(range(-degree - 2, 0))) / math.factorial(degree)


# ---------------------------------------------------------------------------
# connections


def kahler_potential_jet(X: Jet) -> Jet:
    """theta = sum_j (x_j dy_j - y_j dx_j) / (1 + |z|^2); d theta = omega."""
    n = X.shape[-1] // 2
    s = (1.0 + (X * X).sum(-1)).reciprocal().expand_dims(-1)
    comps = jets.stack([-X[..., n:], X[..., :n]], axis=-2)  # (..., 2, n)
    return comps.reshape(*X.shape[:-1], 2 * n) * s


def _alg_times(scalar: Jet, mat: np.ndarray) -> Jet:
    return scalar.expand_dims(-1).expand_dims(-1) * mat


@dataclass(frozen=True)
class Flat:
    rank: int = 2

    def potential(self, X: Jet) -> Jet:
        return Jet.constant(np.zeros(X.shape + (self.rank, self.rank)), X)


@dataclass(frozen=True)
class KahlerAbelian:
    """A = k theta sigma_0; curvature k omega sigma_0."""

    k: float = 1.0
    rank: int = 2

    def potential(self, X: Jet) -> Jet:
        return _alg_times(self.k * kahler_potential_jet(X), rotation_generator(self.rank))


@dataclass(frozen=True)
class NonabelianTest:
    """k theta sigma_0 plus eps/(1+|z|^2)^2 sum_j ((T1 + 0.3 j sigma_0) dx_j + T2 dy_j).

    For r >= 3, T1 and T2 are the rotation generators of the (0, 2) and
    (1, 2) planes, which do not commute with sigma_0; for r = 2 both are
    multiples of sigma_0.
    """

    k: float = 1.0
    eps: float = 0.5
    rank: int = 3

    def pieces(self) -> tuple[np.ndarray, np.ndarray]:
        s0 = rotation_generator(self.rank)
        if self.rank == 2:
            return s0, 0.5 * s0
        L = so_basis(self.rank)
        return L[1], L[self.rank - 1]  # L_02, L_12

    def potential(self, X: Jet) -> Jet:
        n = X.shape[-1] // 2
        s0 = rotation_generator(self.rank)
        T1, T2 = self.pieces()
        C = np.zeros((2 * n, self.rank, self.rank))
        for j in range(n):
            C[j] = T1 + 0.3 * (j + 1) * s0
            C[n + j] = T2
        # squared decay keeps the potential smooth across the hyperplane at infinity
        decay = (1.0 + (X * X).sum(-1)).reciprocal()
        decay = (decay * decay).expand_dims(-1).expand_dims(-1).expand_dims(-1)
        return KahlerAbelian(self.k, self.rank).potential(X) + decay * (self.eps * C)


@dataclass(frozen=True)
class Perturbed:
    """Potential of ``base`` plus ``t`` times a g_E-valued 1-form field."""

    base: object
    bump: object
    t: float = 1.0

    @property
    def rank(self) -> int:
        return self.base.rank

    def potential(self, X: Jet) -> Jet:
        return self.base.potential(X) + self.t * self.bump(X)


CONNECTION_KINDS = {"flat": Flat, "kahler_abelian": KahlerAbelian, "nonabelian_test": NonabelianTest}


# ---------------------------------------------------------------------------
# fields


def bump_jet(X: Jet, center: np.ndarray, radius: float) -> Jet:
    """exp(1 - 1/(1 - s)), s = |x - c|^2 / radius^2, supported in s < 1."""
    d = X - center
    s = (d * d).sum(-1) / radius**2
    inside = s.value < 1.0
    s = s.where(inside)  # keep the composition finite outside the support
    b = (1.0 - (1.0 - s).reciprocal()).exp()
    return b.where(inside)


@dataclass(frozen=True)
class BumpForm:
    """A compactly supported g_E-valued p-form: bump * (1 + l.(x - c)) * coeffs."""

    degree: int
    center: np.ndarray
    radius: float
    coeffs: np.ndarray  # (2n,)*degree + (r, r), antisymmetric
    slope: np.ndarray | None = None
    loss: int = field(default=0, init=False)

    @property
    def rank(self) -> int:
        return self.coeffs.shape[-1]

    def __call__(self, X: Jet) -> Jet:
        b = bump_jet(X, self.center, self.radius)
        if self.slope is not None:
            b = b * (1.0 + ((X - self.center) * self.slope).sum(-1))
        for _ in range(self.degree + 2):
            b = b.expand_dims(-1)
        return b * self.coeffs


def random_bump_form(rng: np.random.Generator, n: int, rank: int, degree: int, radius: float | None = None, center=None) -> BumpForm:
    m = 2 * n
    c = rng.uniform(-0.4, 0.4, size=m) if center is None else np.asarray(center, dtype=float)
    rad = rng.uniform(0.8, 1.4) if radius is None else radius
    coeffs = random_so(rng, rank, (m,) * degree)
    coeffs = antisymmetrize(coeffs, degree)
    if degree == 0:
        coeffs = random_so(rng, rank)
    return BumpForm(degree, c, float(rad), coeffs, rng.normal(scale=0.5, size=m))


@dataclass(frozen=True)
class FieldFn:
    """A field given by a function of the coordinate jet."""

    fn: Callable[[Jet], Jet]
    degree: int
    loss: int = 0

    def __call__(self, X: Jet) -> Jet:
        return self.fn(X)


@dataclass(frozen=True)
class CurvatureField:
    connection: object
    degree: int = field(default=2, init=False)
    loss: int = field(default=1, init=False)

    def __call__(self, X: Jet) -> Jet:
        return curvature_from_potential(self.connection.potential(X))


@dataclass(frozen=True)
class GaugeDirection:
    """B = nabla phi0 = d phi0 + [A, phi0] for a 0-form field phi0."""

    connection: object
    phi0: object
    degree: int = field(default=1, init=False)
    loss: int = field(default=1, init=False)

    def __call__(self, X: Jet) -> Jet:
        phi = self.phi0(X)
        A = self.connection.potential(X)
        return cov_d(phi, 0, None, A)


# ---------------------------------------------------------------------------
# jet-level operators


def curvature_from_potential(A: Jet) -> Jet:
    """R_ab = d_a A_b - d_b A_a + [A_a, A_b]."""
    dA = A.grad()  # [.., b, p, q, a] = d_a A_b
    dA = dA.moveaxis(-1, -4)  # [.., a, b, p, q]
    A = A.truncate(dA.order)  # the bracket is only needed to the order of dA
    Aa = A.expand_dims(-3)
    Ab = A.expand_dims(-4)
    return dA - dA.swapaxes(-3, -4) + jets.bracket(Aa, Ab)


def cov_d(T: Jet, nslots: int, Gam: Jet | None, A: Jet) -> Jet:
    """Total covariant derivative of a g_E-valued tensor with ``nslots`` form slots."""
    dT = T.grad().moveaxis(-1, -3)  # (..., slots, c, r, r)
    T = T.truncate(dT.order)  # lower-order terms only matter to the order of dT
    idx = _SLOTS[:nslots]
    for s in range(nslots):
        src = idx.replace(idx[s], "m")
        dT = dT - jets.einsum(f"...mz{idx[s]},...{src}pq->...{idx}zpq", Gam, T)
    Ae = A.truncate(min(A.order, dT.order))
    for _ in range(nslots):
        Ae = Ae.expand_dims(-4)
    return dT + jets.bracket(Ae, T.expand_dims(-3))


def exterior(Dphi, p: int):
    """d^nabla from a total covariant derivative with p form slots (derivative slot last)."""
    out = None
    for i in range(p + 1):
        # derivative axis moved to position i among the p + 1 slots
        term = Dphi.moveaxis(-3, -(p + 3) + i) if isinstance(Dphi, Jet) else np.moveaxis(Dphi, -3, -(p + 3) + i)
        term = term if i % 2 == 0 else -term
        out = term if out is None else out + term
    return out


def codifferential(Dphi, ginv, p: int):
    """delta^nabla = -g^{ca} (nabla phi)[a, .., c]."""
    idx = _SLOTS[1:p]
    return -jets.einsum(f"...yz,...z{idx}ypq->...{idx}pq", ginv, Dphi)


def frak_R_coords(R, phi, ginv, degree: int):
    """frak_R on coordinate components (arrays or jets; at most two jets)."""
    if degree == 1:
        Rup = jets.einsum("...ab,...axpq->...bxpq", ginv, R)
        # sum_b [R^b_x, phi_b]
        return _frak1(Rup, phi)
    if degree == 2:
        Rup = jets.einsum("...ab,...axpq->...bxpq", ginv, R)
        t = _frak2(Rup, phi)
        return t - _swap_last_slots(t)
    raise ValueError("frak_R is defined for degrees 1 and 2")


def _frak1(Rup, phi):
    return jets.einsum("...bxpr,...brq->...xpq", Rup, phi) - jets.einsum("...bpr,...bxrq->...xpq", phi, Rup)


def _frak2(Rup, phi):
    # [R^b_x, phi_by]
    return jets.einsum("...bxpr,...byrq->...xypq", Rup, phi) - jets.einsum("...bypr,...bxrq->...xypq", phi, Rup)


def _swap_last_slots(t):
    if isinstance(t, Jet):
        return t.swapaxes(-3, -4)
    return np.swapaxes(t, -3, -4)


def bivector_endo(U, W, g):
    """Matrix of Z -> g(U, Z) W - g(W, Z) U, as [i, k]."""
    gU = np.einsum("...a,...ak->...k", U, g)
    gW = np.einsum("...a,...ak->...k", W, g)
    return np.einsum("...i,...k->...ik", W, gU) - np.einsum("...i,...k->...ik", U, gW)


def compose_endo(phi, W, ginv):
    """(phi o W)(X, Y) = 1/2 sum_j phi(e_j, W(X, Y) e_j), W[.., x, y, i, k] an endomorphism-valued 2-form."""
    return 0.5 * np.einsum("...abpq,...xybk,...ka->...xypq", phi, W, ginv)


def ric_wedge_id(riem, g, ginv):
    """(Ric ^ I)(d_x, d_y) = Ric(d_x) ^ d_y + d_x ^ Ric(d_y), as [x, y, i, k]."""
    ric = ricci_operator(riem, ginv)  # [i, x]
    m = g.shape[-1]
    I = np.broadcast_to(np.eye(m), g.shape)
    RX = np.swapaxes(ric, -1, -2)  # [x, i]: components of Ric(d_x)
    t1 = bivector_endo(RX[..., :, None, :], I[..., None, :, :], g[..., None, None, :, :])
    t2 = bivector_endo(I[..., :, None, :], RX[..., None, :, :], g[..., None, None, :, :])
    return t1 + t2


def two_R_endo(riem):
    """2 R(d_x, d_y) as [x, y, i, k]."""
    return 2.0 * np.einsum("...ikxy->...xyik", riem)


def bracket_wedge(B, C=None):
    """[B ^ C](X, Y) = [B(X), C(Y)] - [B(Y), C(X)]; [B ^ B](X, Y) = 2 [B(X), B(Y)]."""
    C = B if C is None else C
    BX = B[..., :, None, :, :]
    CY = C[..., None, :, :, :]
    BY = B[..., None, :, :, :]
    CX = C[..., :, None, :, :]
    return (BX @ CY - CY @ BX) - (BY @ CX - CX @ BY)


# ---------------------------------------------------------------------------
# local bundle data on batches of points


class LocalBundle:
    """Geometry, potential, curvature and covariant derivatives at a batch of points.

    ``order`` is the order of the coordinate and potential jets; the
    curvature jet has order ``order - 1``.
    """

    def __init__(self, connection, x, order: int):
        self.connection = connection
        self.geo = LocalGeometry(x, order)
        self.A = connection.potential(self.geo.coords)
        self.order = order

    @property
    def coords(self) -> Jet:
        return self.geo.coords

    @cached_property
    def R(self) -> Jet:
        return curvature_from_potential(self.A)

    @cached_property
    def ginv_jet(self) -> Jet:
        return self.geo.inverse

    def cov(self, T: Jet, nslots: int) -> Jet:
        Gam = self.geo.christoffel
        A = self.A
        extra = T.ndim - nslots - 2 - (self.geo.x.ndim - 1)
        for _ in range(extra):
            Gam = Gam.expand_dims(-4)
            A = A.expand_dims(-4)
        return cov_d(T, nslots, Gam, A)

    @cached_property
    def nabla_R(self) -> Jet:
        return self.cov(self.R, 2)

    @cached_property
    def nabla2_R(self) -> Jet:
        return self.cov(self.nabla_R, 3)

    @cached_property
    def delta_R(self) -> Jet:
        return codifferential(self.nabla_R, self.ginv_jet, 2)

    def field(self, phi) -> Jet:
        return phi(self.coords)

    def d(self, T: Jet, p: int) -> Jet:
        return exterior(self.cov(T, p), p)

    def delta(self, T: Jet, p: int) -> Jet:
        return codifferential(self.cov(T, p), self.ginv_jet, p)

    def rough_laplacian(self, T: Jet, p: int) -> Jet:
        DD = self.cov(self.cov(T, p), p + 1)
        return -jets.einsum(f"...yz,...{_SLOTS[:p]}yzpq->...{_SLOTS[:p]}pq", self.ginv_jet, DD)

    def hodge_laplacian(self, T: Jet, p: int) -> Jet:
        out = self.delta(self.d(T, p), p + 1)
        if p >= 1:
            out = out + self.d(self.delta(T, p), p - 1)
        return out


# ---------------------------------------------------------------------------
# point-level API


def _field_order(phi, derivs: int) -> int:
    return getattr(phi, "loss", 0) + derivs


def curvature(C, p: ChartPoint) -> AlgForm:
    lb = LocalBundle(C, p.x, 1)
    return AlgForm(2, lb.R.value, p)


def cov_deriv_form(C, phi, p: ChartPoint, X) -> AlgForm:
    """nabla_X phi at p for a field phi of the given degree."""
    lb = LocalBundle(C, p.x, _field_order(phi, 1))
    D = lb.cov(lb.field(phi), phi.degree).value
    return AlgForm(phi.degree, np.tensordot(D, np.asarray(X, float), axes=(-3, 0)), p)


def d_nabla(C, phi, p: ChartPoint) -> AlgForm:
    lb = LocalBundle(C, p.x, _field_order(phi, 1))
    return AlgForm(phi.degree + 1, lb.d(lb.field(phi), phi.degree).value, p)


def delta_nabla(C, phi, p: ChartPoint) -> AlgForm:
    if phi.degree < 1:
        raise ValueError("the codifferential needs degree >= 1")
    lb = LocalBundle(C, p.x, _field_order(phi, 1))
    return AlgForm(phi.degree - 1, lb.delta(lb.field(phi), phi.degree).value, p)


def rough_laplacian(C, phi, p: ChartPoint) -> AlgForm:
    lb = LocalBundle(C, p.x, _field_order(phi, 2))
    return AlgForm(phi.degree, lb.rough_laplacian(lb.field(phi), phi.degree).value, p)


def rough_laplacian_frame(C, phi, p: ChartPoint, frame_rotation: np.ndarray | None = None) -> AlgForm:
    """-sum_j (nabla_{e_j} nabla_{e_j} - nabla_{D_{e_j} e_j}) phi for an explicit frame field.

    The frame field is the Gram-Schmidt frame of the metric jet, optionally
    rotated by a constant orthogonal matrix; this is the frame-dependent
    formula, used to check frame invariance.
    """
    k = _field_order(phi, 2)
    lb = LocalBundle(C, p.x, k)
    g = lb.geo.metric
    E = _frame_jet(g)
    if frame_rotation is not None:
        E = jets.einsum("ij,...jk->...ik", frame_rotation, E)
    T = lb.field(phi)
    DT = lb.cov(T, phi.degree)  # slots..., c
    deg = phi.degree
    s = _SLOTS[:deg]
    out = None
    for j in range(E.shape[-2]):
        e = E[..., j, :]
        # nabla_{e_j} phi as a field, then differentiate again
        first = jets.einsum(f"...{s}cpq,...c->...{s}pq", DT, e)
        second = jets.einsum(f"...{s}cpq,...c->...{s}pq", lb.cov(first, deg), e.truncate(first.order - 1))
        De = (e.grad() + jets.einsum("...icm,...m->...ic", lb.geo.christoffel, e))  # [i, c] = (D_c e)^i
        Dee = jets.einsum("...ic,...c->...i", De, e.truncate(De.order))
        third = jets.einsum(f"...{s}cpq,...c->...{s}pq", DT.truncate(Dee.order), Dee)
        term = second.truncate(0).value - third.truncate(0).value
        out = -term if out is None else out - term
    return AlgForm(deg, out, p)


def _gdot(u: Jet, g: Jet, v: Jet) -> Jet:
    return jets.einsum("...i,...i->...", u, jets.einsum("...ij,...j->...i", g, v))


def _frame_jet(g: Jet) -> Jet:
    """Gram-Schmidt J-adapted frame of a metric jet, rows are vectors."""
    m = g.shape[-1]
    n = m // 2
    J = np.zeros((m, m))
    J[n:, :n] = np.eye(n)
    J[:n, n:] = -np.eye(n)
    vecs = []
    rows = [None] * m
    for a in range(n):
        v = Jet.constant(np.broadcast_to(np.eye(m)[a], g.shape[:-1]).copy(), g)
        for e in vecs:
            v = v - _gdot(v, g, e).expand_dims(-1) * e
        nv = _gdot(v, g, v).sqrt().expand_dims(-1)
        v = v / nv
        Jv = jets.einsum("ij,...j->...i", J, v)
        vecs.extend([v, Jv])
        rows[a] = v
        rows[n + a] = Jv
    return jets.stack(rows, axis=-2)


def frak_R(Rpt: AlgForm, phi: AlgForm, ginv: np.ndarray | None = None) -> AlgForm:
    if Rpt.degree != 2:
        raise ValueError("frak_R needs a curvature 2-form")
    if phi.degree not in (1, 2):
        raise ValueError("frak_R is defined for degrees 1 and 2")
    gi = LocalGeometry(phi.point.x, 0).ginv if ginv is None else ginv
    return AlgForm(phi.degree, frak_R_coords(Rpt.components, phi.components, gi, phi.degree), phi.point)


def curvature_action(Rpt: AlgForm, p: ChartPoint, phi: AlgForm, X, Y) -> AlgForm:
    """[R(X,Y), phi(X_1..X_p)] - sum_i phi(.., R_M(X,Y) X_i, ..)."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    Rxy = Rpt(X, Y)
    out = Rxy @ phi.components - phi.components @ Rxy
    if phi.degree:
        riem = LocalGeometry(p.x, 2).riemann.value
        RM = np.einsum("makl,k,l->ma", riem, X, Y)  # [m, a]: component m of R_M(X,Y) d_a
        idx = _SLOTS[: phi.degree]
        for s in range(phi.degree):
            src = idx.replace(idx[s], "m")
            out = out - np.einsum(f"m{idx[s]},{src}pq->{idx}pq", RM, phi.components)
    return AlgForm(phi.degree, out, p)


def weitzenbock_correction(phi, riem, g, ginv, degree: int):
    """phi o Ric (degree 1) or phi o (Ric ^ I + 2R) (degree 2), on coordinate components."""
    if degree == 1:
        ric = ricci_operator(riem, ginv)
        return np.einsum("...ix,...ipq->...xpq", ric, phi)
    if degree == 2:
        W = ric_wedge_id(riem, g, ginv) + two_R_endo(riem)
        return compose_endo(phi, W, ginv)
    raise ValueError("the Weitzenbock correction is defined for degrees 1 and 2")


def bochner_terms(C, phi, x, order_extra: int = 0):
    """Hodge Laplacian and rough Laplacian + frak_R + correction at points ``x`` (arrays)."""
    deg = phi.degree
    if deg not in (1, 2):
        raise ValueError("Bochner formula is implemented for degrees 1 and 2")
    lb = LocalBundle(C, x, _field_order(phi, 2) + order_extra)
    T = lb.field(phi)
    lhs = lb.hodge_laplacian(T, deg).truncate(0).value
    rough = lb.rough_laplacian(T, deg).truncate(0).value
    geo = LocalGeometry(x, 2)
    R0 = lb.R.truncate(0).value
    Tv = T.truncate(0).value
    rhs = rough + frak_R_coords(R0, Tv, geo.ginv, deg) + weitzenbock_correction(Tv, geo.riemann.value, geo.g, geo.ginv, deg)
    return lhs, rhs, geo


def bochner_residual(C, phi, p: ChartPoint, degree: int | None = None) -> float:
    if degree is not None and degree != phi.degree:
        raise ValueError("degree does not match the field")
    if phi.degree not in (1, 2):
        raise ValueError("Bochner formula is implemented for degrees 1 and 2")
    lhs, rhs, geo = bochner_terms(C, phi, p.x)
    return form_norm(AlgForm(phi.degree, lhs - rhs, p), geo.frame)


def t_expansion_check(C, B, p: ChartPoint, t: float) -> float:
    """|R^{A + tB} - (R + t d^nabla B + 1/2 t^2 [B ^ B])| at p."""
    Ct = Perturbed(C, B, t)
    Rt = curvature(Ct, p).components
    lb = LocalBundle(C, p.x, _field_order(B, 1))
    R0 = lb.R.truncate(0).value
    T = lb.field(B)
    dB = lb.d(T, 1).value
    Bv = T.truncate(0).value
    pred = R0 + t * dB + 0.5 * t**2 * bracket_wedge(Bv)
    return form_norm(AlgForm(2, Rt - pred, p))


def second_bianchi_residual(C, p: ChartPoint) -> float:
    """|d^nabla R| at p."""
    lb = LocalBundle(C, p.x, 2)
    dR = lb.d(lb.R, 2).value
    return float(np.sqrt(max(form_inner_batch(dR, dR, lb.geo.ginv, 3), 0.0)))


def adjoint_pair(C, phi, psi, Q, chunk: int = 4096) -> tuple[float, float]:
    """(int <d^nabla phi, psi>, int <phi, delta^nabla psi>) over the rule Q."""
    p = phi.degree
    if psi.degree != p + 1:
        raise ValueError("psi must have degree one more than phi")
    order = max(getattr(phi, "loss", 0), getattr(psi, "loss", 0)) + 1
    lhs, rhs = [], []
    for x, w in Q.chunks(chunk):
        lb = LocalBundle(C, x, order)
        a, b = lb.field(phi), lb.field(psi)
        ginv = lb.geo.ginv
        da = lb.d(a, p).truncate(0).value
        db = lb.delta(b, p + 1).truncate(0).value
        lhs.append(float(np.dot(w, form_inner_batch(da, b.truncate(0).value, ginv, p + 1))))
        rhs.append(float(np.dot(w, form_inner_batch(a.truncate(0).value, db, ginv, p))))
    return math.fsum(lhs), math.fsum(rhs)
