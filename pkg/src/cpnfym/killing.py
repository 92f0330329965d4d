"""Killing fields of CP^n induced by su(n+1).

A generator ``A`` acts by ``[z] -> [exp(tA) z]``; on the chart U_0 the
induced field is

    V_A = sum_j w_j Z_j + conj,   w_j = a_j0 + a_ji z_i - a_00 z_j - a_0i z_i z_j,

i.e. the real vector with components ``(Re w, Im w)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, null_space

from . import jets
from .geometry import ChartPoint, LocalGeometry, as_real_coords, inner
from .jets import Jet


def check_su(A, tol: float = 1e-12) -> np.ndarray:
    """Validate an element of su(n+1) and return it as a complex array."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 2:
        raise ValueError("generator must be a square matrix of size >= 2")
    scale = max(1.0, float(np.abs(A).max()))
    if np.abs(A + A.conj().T).max() > tol * scale:
        raise ValueError("generator is not anti-Hermitian")
    if abs(np.trace(A)) > tol * scale:
        raise ValueError("generator is not traceless")
    return A


@dataclass(frozen=True)
class KillingField:
    generator: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "generator", check_su(self.generator))

    @property
    def n(self) -> int:
        return self.generator.shape[0] - 1


def killing_inner(A, B) -> float:
    """<V_A, V_B> = tr(conj(A)^T B)."""
    return float(np.real(np.trace(np.conj(A).T @ B)))


@dataclass(frozen=True)
class KillingBasis:
    elements: tuple

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    def __getitem__(self, i) -> KillingField:
        return self.elements[i]

    @property
    def n(self) -> int:
        return self.elements[0].n

    @property
    def generators(self) -> np.ndarray:
        return np.stack([v.generator for v in self.elements])

    @property
    def labels(self) -> list[str]:
        return [v.label for v in self.elements]

    def gram(self) -> np.ndarray:
        G = self.generators
        return np.real(np.einsum("kij,lij->kl", G.conj(), G))

    def recombine(self, Q: np.ndarray) -> "KillingBasis":
        """New basis with generators sum_k Q[k, l] A_k (orthogonal Q keeps it orthonormal)."""
        G = np.einsum("kij,kl->lij", self.generators, Q)
        return KillingBasis(tuple(KillingField(g, f"mix{l}") for l, g in enumerate(G)))


def su_basis(n: int) -> KillingBasis:
    """Orthonormal basis A_kl, B_kl (0 <= k < l <= n) and C_t (1 <= t <= n) of su(n+1)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    N = n + 1
    out = []

    def E(i, j):
        m = np.zeros((N, N), dtype=complex)
        m[i, j] = 1.0
        return m

    for k in range(N):
        for l in range(k + 1, N):
            out.append(KillingField((E(k, l) - E(l, k)) / np.sqrt(2), f"A{k}{l}"))
            out.append(KillingField(1j * (E(k, l) + E(l, k)) / np.sqrt(2), f"B{k}{l}"))
    for t in range(1, N):
        d = np.zeros(N, dtype=complex)
        d[:t] = 1.0
        d[t] = -t
        out.append(KillingField(1j * np.diag(d) / np.sqrt(t * (t + 1)), f"C{t}"))
    return KillingBasis(tuple(out))


def _generators(V) -> np.ndarray:
    if isinstance(V, KillingBasis):
        return V.generators
    if isinstance(V, KillingField):
        return V.generator
    return np.asarray(V, dtype=complex)


def killing_jet(generators: np.ndarray, X: Jet) -> Jet:
    """Jet of V_A at coordinate jet X (shape (..., 2n)).

    ``generators`` has shape ``(*g, n+1, n+1)``; the result has shape
    ``(..., *g, 2n)``.
    """
    a = np.asarray(generators, dtype=complex)
    n = a.shape[-1] - 1
    g = a.shape[:-2]
    z = X[..., :n] + 1j * X[..., n:]
    for _ in g:
        z = z.expand_dims(-2)
    a_j0 = a[..., 1:, 0]
    a_ji = a[..., 1:, 1:]
    a_00 = a[..., 0, 0]
    a_0i = a[..., 0, 1:]
    lin = jets.einsum("...ji,...i->...j", a_ji, z)
    s = jets.einsum("...i,...i->...", a_0i, z).expand_dims(-1)
    w = lin - z * a_00[..., None] - s * z + a_j0
    return Jet(np.concatenate([w.real.c, w.imag.c], axis=-2), w.space)


def vector_cov_deriv(V: Jet, Gam: Jet) -> Jet:
    """(DV)[..., i, c] = d_c V^i + Gamma^i_{cm} V^m."""
    return V.grad() + jets.einsum("...icm,...m->...ic", Gam, V)


def vector_second_cov_deriv(DV: Jet, Gam: Jet) -> Jet:
    """(D^2 V)[..., i, c, d]: component i of D^2_{d_d, d_c} V (d is the outer slot)."""
    return (
        DV.grad()
        + jets.einsum("...idm,...mc->...icd", Gam, DV)
        - jets.einsum("...mdc,...im->...icd", Gam, DV)
    )


class LocalKilling:
    """Killing fields V, their J-rotations and covariant derivatives at points.

    Arrays carry the generator axes right after the batch axes:
    ``V[..., *g, i]``, ``DV[..., *g, i, c]``, ``D2V[..., *g, i, c, d]``.
    """

    def __init__(self, generators, geo: LocalGeometry, rotate: bool = False):
        self.geo = geo
        gens = np.asarray(generators, dtype=complex)
        ng = gens.ndim - 2
        V = killing_jet(gens, geo.coords)
        if rotate:
            V = jets.einsum("ij,...j->...i", geo.J, V)
        Gam = geo.christoffel
        for _ in range(ng):
            Gam = Gam.expand_dims(-4)
        self.field = V
        self.D = vector_cov_deriv(V, Gam)
        self.D2 = vector_second_cov_deriv(self.D, Gam) if self.D.order >= 1 else None


def killing_eval(V: KillingField, p: ChartPoint) -> np.ndarray:
    x = as_real_coords(p)
    return killing_jet(_generators(V), Jet.variables(x, 0)).value


def killing_cov_deriv(V: KillingField, p: ChartPoint, X) -> np.ndarray:
    """D_X V at p."""
    geo = LocalGeometry(as_real_coords(p), 1)
    DV = LocalKilling(_generators(V), geo).D.value
    return DV @ np.asarray(X, dtype=float)


def killing_second_identity_residual(V: KillingField, p: ChartPoint, X, Y) -> float:
    """|D^2_{X,Y} V - R(X, V) Y| in the metric at p."""
    geo = LocalGeometry(as_real_coords(p), 2)
    lk = LocalKilling(_generators(V), geo)
    d2 = np.einsum("icd,d,c->i", lk.D2.value, X, Y)
    Vp = lk.field.value
    rhs = np.einsum("ijkl,j,k,l->i", geo.riemann.value, Y, X, Vp)
    diff = d2 - rhs
    return float(np.sqrt(max(inner(geo.g, diff, diff), 0.0)))


def killing_flow_velocity(V: KillingField, p: ChartPoint, h: float = 1e-5) -> np.ndarray:
    """d/dt of the chart image of exp(tA)(1, z) at t = 0, by central differences."""
    A = _generators(V)
    z = np.concatenate([[1.0], p.z])

    def chart(t):
        w = expm(t * A) @ z
        u = w[1:] / w[0]
        return np.concatenate([u.real, u.imag])

    return (chart(h) - chart(-h)) / (2 * h)


@dataclass(frozen=True)
class IsotropyDecomposition:
    point: ChartPoint
    f_part: tuple  # fields vanishing at the point
    p_part: tuple  # fields with zero covariant derivative at the point
    p_norms: np.ndarray = field(repr=False)  # |J V(p)| for the p_part, before use in frame sums


def isotropy_decompose(basis: KillingBasis, p: ChartPoint, tol: float = 1e-9) -> IsotropyDecomposition:
    """Split span(basis) into the isotropy algebra at p and its complement.

    Both parts are orthonormal for tr(conj(A)^T B), assuming ``basis`` is.
    The p-part is rotated so that its J-images at p are g-orthogonal.
    """
    n = basis.n
    geo = LocalGeometry(as_real_coords(p), 1)
    gens = basis.generators
    lk = LocalKilling(gens, geo)
    ev = lk.field.value.T  # (2n, q)
    dv = lk.D.value.reshape(len(basis), -1).T  # (4n^2, q)
    f_coef = null_space(ev, rcond=tol)
    p_coef = null_space(dv, rcond=tol)
    q = len(basis)
    if f_coef.shape[1] != q - 2 * n or p_coef.shape[1] != 2 * n:
        raise RuntimeError(
            f"isotropy decomposition has dimensions {f_coef.shape[1]} + {p_coef.shape[1]}, expected {q - 2 * n} + {2 * n}"
        )
    J = geo.J
    W = J @ ev @ p_coef  # J V(p) for the p-part, (2n, 2n)
    S = W.T @ geo.g @ W
    _, U = np.linalg.eigh(S)
    p_coef = p_coef @ U
    W = W @ U
    norms = np.sqrt(np.einsum("ik,ij,jk->k", W, geo.g, W))

    def mk(coef, tag):
        G = np.einsum("kij,kl->lij", gens, coef)
        return tuple(KillingField(g, f"{tag}{l}") for l, g in enumerate(G))

    return IsotropyDecomposition(p, mk(f_coef, "f"), mk(p_coef, "p"), norms)


def djv_table_z0(basis: KillingBasis) -> dict:
    """Closed-form D JV at z_0 for the f-part of ``su_basis``.

    Returns ``{label: M}`` with ``M[m, i]`` the e_m-component of D_{e_i} JV in
    the frame of :func:`cpnfym.geometry.frame_z0`.
    """
    n = basis.n
    m = 2 * n
    s = 1.0 / np.sqrt(2.0)
    out = {}
    for V in basis:
        lab, M = V.label, np.zeros((m, m))
        if lab[0] in "AB":
            k, l = int(lab[1]) - 1, int(lab[2]) - 1
            if k < 0:
                continue  # p-part: D JV(z_0) is not tabulated
            if lab[0] == "A":
                M[n + k, l], M[n + l, k] = s, -s
                M[l, n + k], M[k, n + l] = s, -s
            else:
                M[k, l], M[l, k] = -s, -s
                M[n + k, n + l], M[n + l, n + k] = -s, -s
        else:
            t = int(lab[1:])
            for a in range(t - 1, n):
                c = np.sqrt((t + 1) / t) if a == t - 1 else 1.0 / np.sqrt(t * (t + 1))
                M[a, a] = M[n + a, n + a] = c
        out[lab] = M
    return out


def djv_frame_z0(V: KillingField) -> np.ndarray:
    """Numerical D JV at z_0 in the same layout as :func:`djv_table_z0`."""
    n = V.n
    geo = LocalGeometry(np.zeros(2 * n), 1)
    E = geo.frame
    D = LocalKilling(V.generator, geo, rotate=True).D.value
    return np.einsum("ma,ab,bc,ic->mi", E, geo.g, D, E)
