"""Truncated multivariate Taylor arithmetic (forward-mode jets).

A :class:`Jet` stores the Taylor coefficients of an array-valued function of
``dim`` real variables around a base point, truncated at total degree
``order``.  Coefficients live on the last axis, ordered by graded
lexicographic monomial order, so truncating to a lower order is a prefix
slice.  All leading axes (batch and value axes) broadcast like numpy arrays.

Differentiating a jet (:meth:`Jet.grad`) lowers its order by one, which is
how exact derivatives of any order up to the initial truncation are
obtained.  Coefficients may be complex.
"""

from __future__ import annotations

import functools
import itertools
import math
import string
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class JetSpace:
    dim: int
    order: int
    monomials: tuple = field(repr=False)
    index: dict = field(repr=False, compare=False)
    # product table, sorted by target monomial
    left: np.ndarray = field(repr=False, compare=False)
    right: np.ndarray = field(repr=False, compare=False)
    starts: np.ndarray = field(repr=False, compare=False)
    # derivative table: coefficient of d/dx_v at alpha is fac[v, a] * c[src[v, a]]
    dsrc: np.ndarray = field(repr=False, compare=False)
    dfac: np.ndarray = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.monomials)


def _graded_monomials(dim: int, order: int) -> list[tuple[int, ...]]:
    out = []
    for deg in range(order + 1):
        # reversed lex inside a degree keeps x_0 first
        same = [m for m in itertools.product(range(deg + 1), repeat=dim) if sum(m) == deg]
        out.extend(sorted(same, reverse=True))
    return out


@functools.lru_cache(maxsize=None)
def jet_space(dim: int, order: int) -> JetSpace:
    if dim < 1 or order < 0:
        raise ValueError("jet space needs dim >= 1 and order >= 0")
    monos = _graded_monomials(dim, order)
    index = {m: i for i, m in enumerate(monos)}
    triples = []
    for i, a in enumerate(monos):
        for j, b in enumerate(monos):
            s = tuple(x + y for x, y in zip(a, b))
            k = index.get(s)
            if k is not None:
                triples.append((k, i, j))
    triples.sort()
    tgt = np.array([t[0] for t in triples])
    left = np.array([t[1] for t in triples])
    right = np.array([t[2] for t in triples])
    starts = np.flatnonzero(np.r_[True, tgt[1:] != tgt[:-1]])

    lower = monos[: len(_graded_monomials(dim, order - 1))] if order > 0 else []
    dsrc = np.zeros((dim, len(lower)), dtype=int)
    dfac = np.zeros((dim, len(lower)))
    for v in range(dim):
        for a, m in enumerate(lower):
            up = list(m)
            up[v] += 1
            dsrc[v, a] = index[tuple(up)]
            dfac[v, a] = up[v]
    return JetSpace(dim, order, tuple(monos), index, left, right, starts, dsrc, dfac)


def _as_coeffs(value, space: JetSpace) -> np.ndarray:
    value = np.asarray(value)
    c = np.zeros(value.shape + (space.size,), dtype=np.result_type(value, float))
    c[..., 0] = value
    return c


class Jet:
    """Array of truncated Taylor polynomials; see the module docstring."""

    __slots__ = ("c", "space")
    __array_priority__ = 1000

    def __init__(self, coeffs: np.ndarray, space: JetSpace):
        if coeffs.shape[-1] != space.size:
            raise ValueError(f"coefficient axis has length {coeffs.shape[-1]}, expected {space.size}")
        self.c = coeffs
        self.space = space

    # construction -----------------------------------------------------
    @classmethod
    def variables(cls, x0, order: int) -> "Jet":
        """Identity jet at ``x0`` (shape ``(..., dim)``): the coordinate functions."""
        x0 = np.asarray(x0, dtype=float)
        dim = x0.shape[-1]
        space = jet_space(dim, order)
        c = np.zeros(x0.shape + (space.size,))
        c[..., 0] = x0
        if order >= 1:
            for v in range(dim):
                c[..., v, 1 + v] = 1.0
        return cls(c, space)

    @classmethod
    def constant(cls, value, like: "Jet") -> "Jet":
        return cls(_as_coeffs(value, like.space), like.space)

    # basic properties ---------------------------------------------------
    @property
    def order(self) -> int:
        return self.space.order

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def shape(self) -> tuple:
        return self.c.shape[:-1]

    @property
    def ndim(self) -> int:
        return self.c.ndim - 1

    @property
    def value(self) -> np.ndarray:
        return self.c[..., 0]

    @property
    def real(self) -> "Jet":
        return Jet(self.c.real, self.space)

    @property
    def imag(self) -> "Jet":
        return Jet(self.c.imag, self.space)

    def conj(self) -> "Jet":
        return Jet(self.c.conj(), self.space)

    def truncate(self, order: int) -> "Jet":
        if order == self.order:
            return self
        if order > self.order:
            raise ValueError("cannot raise the order of a jet")
        space = jet_space(self.dim, order)
        return Jet(self.c[..., : space.size], space)

    def __repr__(self) -> str:
        return f"Jet(shape={self.shape}, dim={self.dim}, order={self.order})"

    # array-like manipulation on value axes ----------------------------------
    def __getitem__(self, key) -> "Jet":
        if not isinstance(key, tuple):
            key = (key,)
        return Jet(self.c[(*key, slice(None))], self.space)

    def _ax(self, a: int) -> int:
        return a - 1 if a < 0 else a

    def swapaxes(self, a: int, b: int) -> "Jet":
        return Jet(np.swapaxes(self.c, self._ax(a), self._ax(b)), self.space)

    def moveaxis(self, src: int, dst: int) -> "Jet":
        return Jet(np.moveaxis(self.c, self._ax(src), self._ax(dst)), self.space)

    def reshape(self, *shape) -> "Jet":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Jet(self.c.reshape(*shape, self.space.size), self.space)

    def expand_dims(self, axis: int) -> "Jet":
        return Jet(np.expand_dims(self.c, self._ax(axis)), self.space)

    def sum(self, axis) -> "Jet":
        if isinstance(axis, int):
            axis = (axis,)
        return Jet(self.c.sum(axis=tuple(self._ax(a) for a in axis)), self.space)

    def where(self, mask) -> "Jet":
        """Zero the jet wherever ``mask`` (broadcast over value axes) is false."""
        mask = np.asarray(mask)[..., None]
        return Jet(np.where(mask, self.c, 0.0), self.space)

    # differentiation ----------------------------------------------------
    def grad(self) -> "Jet":
        """Jet of the gradient; the derivative index is a new last value axis."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        sp = self.space
        lower = jet_space(sp.dim, sp.order - 1)
        return Jet(self.c[..., sp.dsrc] * sp.dfac, lower)

    def derivative(self, *multi: int) -> np.ndarray:
        """Partial derivative d^k/dx_{i1}..dx_{ik} at the base point."""
        counts = [0] * self.dim
        for v in multi:
            counts[v] += 1
        k = self.space.index[tuple(counts)]
        return self.c[..., k] * math.prod(math.factorial(m) for m in counts)

    # arithmetic -----------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Jet):
            if other.dim != self.dim:
                raise ValueError("jets over different numbers of variables")
            k = min(self.order, other.order)
            return self.truncate(k), other.truncate(k)
        return self, Jet(_as_coeffs(other, self.space), self.space)

    def __add__(self, other):
        a, b = self._coerce(other)
        return Jet(a.c + b.c, a.space)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self._coerce(other)
        return Jet(a.c - b.c, a.space)

    def __rsub__(self, other):
        a, b = self._coerce(other)
        return Jet(b.c - a.c, a.space)

    def __neg__(self):
        return Jet(-self.c, self.space)

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c * np.asarray(other)[..., None], self.space)
        a, b = self._coerce(other)
        sp = a.space
        prod = a.c[..., sp.left] * b.c[..., sp.right]
        return Jet(np.add.reduceat(prod, sp.starts, axis=-1), sp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.c / np.asarray(other)[..., None], self.space)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, int) and p >= 0:
            out = Jet.constant(np.ones(self.shape), self)
            for _ in range(p):
                out = out * self
            return out
        a = self.value
        return self.compose([_falling(p, k) * a ** (p - k) for k in range(self.order + 1)])

    def compose(self, derivs) -> "Jet":
        """Compose a scalar function f with this jet given f^(k)(value), k = 0..order."""
        h = Jet(self.c.copy(), self.space)
        h.c[..., 0] = 0.0
        k = self.order
        out = Jet.constant(np.asarray(derivs[k]) / math.factorial(k), self)
        for j in range(k - 1, -1, -1):
            out = out * h + np.asarray(derivs[j]) / math.factorial(j)
        return out

    def reciprocal(self) -> "Jet":
        a = self.value
        return self.compose([(-1) ** k * math.factorial(k) / a ** (k + 1) for k in range(self.order + 1)])

    def exp(self) -> "Jet":
        e = np.exp(self.value)
        return self.compose([e] * (self.order + 1))

    def sqrt(self) -> "Jet":
        return self ** 0.5


def _falling(p: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= p - j
    return out


def _free_letter(subscripts: str) -> str:
    for ch in string.ascii_uppercase + string.ascii_lowercase:
        if ch not in subscripts:
            return ch
    raise ValueError("no free einsum letter")


def einsum(subscripts: str, *operands):
    """``numpy.einsum`` over jets and plain arrays; at most two operands may be jets.

    Use ``...`` for leading batch axes.  The result is a :class:`Jet` whenever
    any operand is one.
    """
    jets = [i for i, op in enumerate(operands) if isinstance(op, Jet)]
    if not jets:
        return np.einsum(subscripts, *operands)
    if len(jets) > 2:
        raise ValueError("jet einsum supports at most two jet operands")
    ins, out = subscripts.replace(" ", "").split("->")
    terms = ins.split(",")
    t = _free_letter(subscripts)
    args = list(operands)
    if len(jets) == 1:
        sp = operands[jets[0]].space
        args[jets[0]] = operands[jets[0]].c
        terms[jets[0]] += t
        res = np.einsum(",".join(terms) + "->" + out + t, *args)
        return Jet(res, sp)
    i, j = jets
    k = min(operands[i].order, operands[j].order)
    a, b = operands[i].truncate(k), operands[j].truncate(k)
    sp = a.space
    args[i] = a.c[..., sp.left]
    args[j] = b.c[..., sp.right]
    terms[i] += t
    terms[j] += t
    prod = np.einsum(",".join(terms) + "->" + out + t, *args)
    return Jet(np.add.reduceat(prod, sp.starts, axis=-1), sp)


def stack(jets, axis: int = 0) -> Jet:
    """Stack jets (or arrays, lifted to constants) along a new value axis."""
    ref = next(j for j in jets if isinstance(j, Jet))
    k = min(j.order for j in jets if isinstance(j, Jet))
    sp = jet_space(ref.dim, k)
    cs = [j.truncate(k).c if isinstance(j, Jet) else _as_coeffs(j, sp) for j in jets]
    cs = np.broadcast_arrays(*cs)
    ax = axis - 1 if axis < 0 else axis
    return Jet(np.stack(cs, axis=ax), sp)


def matmul(a, b):
    """Matrix product over the last two value axes."""
    if not (isinstance(a, Jet) and isinstance(b, Jet)):
        return einsum("...ij,...jk->...ik", a, b)
    k = min(a.order, b.order)
    a, b = a.truncate(k), b.truncate(k)
    sp = a.space
    # product-table axis in front of the matrix axes so np.matmul batches over it
    x = np.moveaxis(a.c[..., sp.left], -1, -3)
    y = np.moveaxis(b.c[..., sp.right], -1, -3)
    prod = np.add.reduceat(np.matmul(x, y), sp.starts, axis=-3)
    return Jet(np.moveaxis(prod, -3, -1), sp)


def bracket(a, b):
    """Commutator [a, b] of matrix-valued jets over their last two axes."""
    return matmul(a, b) - matmul(b, a)


def inv(m: Jet) -> Jet:
    """Inverse of a square-matrix jet by the Neumann series about its value."""
    m0inv = np.linalg.inv(m.value)
    h = Jet(m.c.copy(), m.space)
    h.c[..., 0] = 0.0
    step = -einsum("...ij,...jk->...ik", m0inv, h)
    out = Jet.constant(m0inv, m)
    term = Jet.constant(m0inv, m)
    for _ in range(m.order):
        term = matmul(step, term)
        out = out + term
    return out
