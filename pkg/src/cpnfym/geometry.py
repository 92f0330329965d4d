"""Fubini-Study geometry of CP^n on the affine chart U_0 = {[1:z_1:...:z_n]}.

Real coordinates are ordered ``(x_1, ..., x_n, y_1, ..., y_n)`` with
``z_j = x_j + i y_j``.  Tangent vectors are plain arrays of 2n real
components in the coordinate basis ``(d/dx_1, ..., d/dy_n)``.

The real metric extends the Hermitian matrix ``g_{i jbar}`` by
``g(Z_i, Zbar_j) = g_{i jbar}`` and ``g(Z_i, Z_j) = 0``; with this scaling the
holomorphic sectional curvature is 2, ``Ric = (n+1) g`` and
``Vol(CP^n) = (2 pi)^n / n!``.

Curvature convention: ``R(X,Y)Z = D_X D_Y Z - D_Y D_X Z - D_[X,Y] Z``.
Component ``riem[..., i, j, k, l]`` is the ``i``-th component of
``R(d_k, d_l) d_j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import jets
from .jets import Jet


@dataclass(frozen=True)
class ChartPoint:
    """A point of U_0 given by its complex chart coordinates."""

    z: np.ndarray

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=complex))
        if z.ndim != 1 or z.size < 1:
            raise ValueError("a chart point needs n >= 1 complex coordinates")
        if not np.all(np.isfinite(z)):
            raise ValueError("chart coordinates must be finite")
        object.__setattr__(self, "z", z)

    @classmethod
    def origin(cls, n: int) -> "ChartPoint":
        return cls(np.zeros(n, dtype=complex))

    @classmethod
    def from_real(cls, x) -> "ChartPoint":
        x = np.asarray(x, dtype=float)
        n = x.shape[-1] // 2
        return cls(x[:n] + 1j * x[n:])

    @property
    def n(self) -> int:
        return self.z.size

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.z.real, self.z.imag])


def as_real_coords(p) -> np.ndarray:
    """Real coordinates of a ChartPoint, or pass an array of them through."""
    if isinstance(p, ChartPoint):
        return p.x
    return np.asarray(p, dtype=float)


def complex_structure(n: int) -> np.ndarray:
    """Matrix of J in the real coordinate basis: d/dx_j -> d/dy_j -> -d/dx_j."""
    J = np.zeros((2 * n, 2 * n))
    J[n:, :n] = np.eye(n)
    J[:n, n:] = -np.eye(n)
    return J


# ---------------------------------------------------------------------------
# metric and Levi-Civita data as jets


def hermitian_metric_jet(X: Jet) -> Jet:
    n = X.shape[-1] // 2
    z = X[..., :n] + 1j * X[..., n:]
    s = 1.0 + (X * X).sum(-1)
    outer = jets.einsum("...i,...j->...ij", z.conj(), z)
    inv_s = s.reciprocal().expand_dims(-1).expand_dims(-1)
    return inv_s * np.eye(n) - outer * inv_s * inv_s


def real_metric_jet(X: Jet) -> Jet:
    h = hermitian_metric_jet(X)
    P, Q = h.real.c, h.imag.c
    top = np.concatenate([P, Q], axis=-2)
    bot = np.concatenate([-Q, P], axis=-2)
    return Jet(2.0 * np.concatenate([top, bot], axis=-3), h.space)


def christoffel_from_metric(G: Jet, Ginv: Jet) -> Jet:
    """Gamma^k_{ij} stored as ``[..., k, i, j]``; one order lower than G."""
    dG = G.grad()  # [..., a, b, c] = d_c g_ab
    low = (
        jets.einsum("...jli->...lij", dG)
        + jets.einsum("...ilj->...lij", dG)
        - jets.einsum("...ijl->...lij", dG)
    )
    return 0.5 * jets.einsum("...kl,...lij->...kij", Ginv, low)


def riemann_from_christoffel(Gam: Jet) -> Jet:
    dGam = Gam.grad()  # [..., i, j, k, c] = d_c Gamma^i_{jk}
    return (
        jets.einsum("...iljk->...ijkl", dGam)
        - jets.einsum("...ikjl->...ijkl", dGam)
        + jets.einsum("...ikm,...mlj->...ijkl", Gam, Gam)
        - jets.einsum("...ilm,...mkj->...ijkl", Gam, Gam)
    )


class LocalGeometry:
    """Metric, inverse, Christoffel and Riemann jets at a batch of points.

    ``order`` is the order of the metric jet; the Christoffel jet has order
    ``order - 1`` and the Riemann jet ``order - 2``.
    """

    def __init__(self, x, order: int):
        self.x = np.asarray(x, dtype=float)
        self.n = self.x.shape[-1] // 2
        self.order = order
        self.coords = Jet.variables(self.x, order)
        self.metric = real_metric_jet(self.coords)

    @cached_property
    def inverse(self) -> Jet:
        return jets.inv(self.metric)

    @cached_property
    def christoffel(self) -> Jet:
        return christoffel_from_metric(self.metric, self.inverse)

    @cached_property
    def riemann(self) -> Jet:
        return riemann_from_christoffel(self.christoffel)

    @cached_property
    def g(self) -> np.ndarray:
        return self.metric.value

    @cached_property
    def ginv(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    @cached_property
    def frame(self) -> np.ndarray:
        return orthonormal_frame(self.g)

    @cached_property
    def J(self) -> np.ndarray:
        return complex_structure(self.n)


# ---------------------------------------------------------------------------
# point-level API


@dataclass(frozen=True)
class MetricAtPoint:
    hermitian: np.ndarray
    real_metric: np.ndarray
    inverse: np.ndarray
    christoffel: np.ndarray


def fs_metric(p: ChartPoint) -> MetricAtPoint:
    x = as_real_coords(p)
    geo = LocalGeometry(x, 1)
    h = hermitian_metric_jet(Jet.variables(x, 0)).value
    return MetricAtPoint(h, geo.g, geo.ginv, geo.christoffel.value)


def volume_density(x) -> np.ndarray:
    """sqrt(det g) at real coordinates ``x`` (batched), in closed form 2^n/(1+|z|^2)^(n+1)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1] // 2
    return 2.0**n / (1.0 + np.sum(x * x, axis=-1)) ** (n + 1)


def inner(g: np.ndarray, X, Y) -> np.ndarray:
    return np.einsum("...i,...ij,...j->...", X, g, Y)


def j_apply(p: ChartPoint, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return complex_structure(X.shape[-1] // 2) @ X


def orthonormal_frame(g: np.ndarray) -> np.ndarray:
    """J-adapted orthonormal frame for metric(s) ``g``; rows are frame vectors.

    ``e_1..e_n`` come from Gram-Schmidt on d/dx_1..d/dx_n and
    ``e_{n+a} = J e_a``, which reproduces the canonical frame at z = 0.
    """
    g = np.asarray(g)
    m = g.shape[-1]
    n = m // 2
    J = complex_structure(n)
    E = np.zeros(g.shape[:-2] + (m, m))
    basis = []
    for a in range(n):
        v = np.zeros(g.shape[:-2] + (m,))
        v[..., a] = 1.0
        for e in basis:
            v = v - inner(g, v, e)[..., None] * e
        v = v / np.sqrt(inner(g, v, v))[..., None]
        Jv = v @ J.T
        basis.extend([v, Jv])
        E[..., a, :] = v
        E[..., n + a, :] = Jv
    return E


def frame_z0(n: int) -> np.ndarray:
    """The canonical frame at the origin: e_a = d/dx_a / sqrt 2, e_{n+a} = d/dy_a / sqrt 2."""
    return np.eye(2 * n) / np.sqrt(2.0)


def riemann_tensor(p) -> np.ndarray:
    return LocalGeometry(as_real_coords(p), 2).riemann.value


def riemann(p: ChartPoint, X, Y, Z) -> np.ndarray:
    """R(X, Y) Z at p."""
    Rm = riemann_tensor(p)
    return np.einsum("ijkl,j,k,l->i", Rm, Z, X, Y)


def ricci_operator(riem: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """Matrix of X -> sum_j R(X, e_j) e_j, i.e. ``ric[i, k]`` = component i for X = d_k."""
    return np.einsum("...imkl,...lm->...ik", riem, ginv)


def ricci(p: ChartPoint, X, frame: np.ndarray | None = None) -> np.ndarray:
    """Ric(X) = sum_j R(X, e_j) e_j over an orthonormal frame at p."""
    x = as_real_coords(p)
    geo = LocalGeometry(x, 2)
    E = geo.frame if frame is None else frame
    Rm = geo.riemann.value
    return sum(np.einsum("ijkl,j,k,l->i", Rm, e, X, e) for e in E)


def curvature_identity_iii(p: ChartPoint, X, frame: np.ndarray | None = None) -> np.ndarray:
    """sum_j R(JX, e_j) J e_j over an orthonormal frame at p."""
    x = as_real_coords(p)
    geo = LocalGeometry(x, 2)
    E = geo.frame if frame is None else frame
    J = geo.J
    Rm = geo.riemann.value
    JX = J @ X
    return sum(np.einsum("ijkl,j,k,l->i", Rm, J @ e, JX, e) for e in E)


def curvature_table_z0(n: int) -> np.ndarray:
    """Frame components at z = 0 from the six closed-form families.

    ``T[i, j, k, l]`` is component i of ``R(e_k, e_l) e_j`` in the frame of
    :func:`frame_z0`; pairs with the first slot in the x-block and the
    second in the y-block follow by antisymmetry.
    """
    m = 2 * n
    T = np.zeros((m, m, m, m))
    I = np.eye(n)

    def put(k, l, j, vec):
        T[:, j, k, l] = vec
        T[:, j, l, k] = -vec

    for a in range(n):
        for b in range(n):
            for c in range(n):
                x_a, x_b, y_a, y_b = np.zeros(m), np.zeros(m), np.zeros(m), np.zeros(m)
                x_a[a] = x_b[b] = y_a[n + a] = y_b[n + b] = 1.0
                x_c, y_c = np.zeros(m), np.zeros(m)
                x_c[c] = y_c[n + c] = 1.0
                d_bc, d_ac, d_ab = I[b, c], I[a, c], I[a, b]
                put(a, b, c, 0.5 * d_bc * x_a - 0.5 * d_ac * x_b)
                put(a, b, n + c, 0.5 * d_bc * y_a - 0.5 * d_ac * y_b)
                put(n + a, b, c, d_ab * y_c + 0.5 * d_bc * y_a + 0.5 * d_ac * y_b)
                put(n + a, b, n + c, -d_ab * x_c - 0.5 * d_bc * x_a - 0.5 * d_ac * x_b)
                put(n + a, n + b, c, 0.5 * d_bc * x_a - 0.5 * d_ac * x_b)
                put(n + a, n + b, n + c, 0.5 * d_bc * y_a - 0.5 * d_ac * y_b)
    return T


def riemann_frame(p) -> np.ndarray:
    """Riemann components in the orthonormal frame at p: component i of R(e_k, e_l) e_j."""
    geo = LocalGeometry(as_real_coords(p), 2)
    E = geo.frame
    return np.einsum("ia,ab,bcde,jc,kd,le->ijkl", E, geo.g, geo.riemann.value, E, E, E)
