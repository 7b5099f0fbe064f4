"""Truncated multivariate Taylor arithmetic (forward-mode AD of any order).

A jet over ``nvars`` variables truncated at total degree ``order`` stores the
Taylor coefficients ``c[beta] = d^beta f / beta!`` of a function around an
expansion point. Coefficient arrays have shape ``(..., size)`` so that any
number of leading batch axes (points, tensor components) ride along for free.

Monomials are ordered by total degree, so the coefficients of a lower-order
truncation are a prefix of the full array.
"""

from __future__ import annotations

import functools
import math
from itertools import product

import numpy as np


def _monomials(nvars: int, order: int) -> list[tuple[int, ...]]:
    out = []
    for deg in range(order + 1):
        layer = [e for e in product(range(deg, -1, -1), repeat=nvars) if sum(e) == deg]
        out.extend(layer)
    return out


class JetSpace:
    """Index tables for jets in ``nvars`` variables up to total degree ``order``."""

    def __init__(self, nvars: int, order: int):
        if nvars < 1 or order < 0:
            raise ValueError("need nvars >= 1 and order >= 0")
        self.nvars = nvars
        self.order = order
        self.monomials = tuple(_monomials(nvars, order))
        self.size = len(self.monomials)
        self.index = {e: i for i, e in enumerate(self.monomials)}
        self.degree = np.array([sum(e) for e in self.monomials])
        self.factorial = np.array(
            [math.prod(math.factorial(b) for b in e) for e in self.monomials], dtype=float
        )
        pa, pb, pc = [], [], []
        for i, a in enumerate(self.monomials):
            da = sum(a)
            for j, b in enumerate(self.monomials):
                if da + sum(b) <= order:
                    pa.append(i)
                    pb.append(j)
                    pc.append(self.index[tuple(x + y for x, y in zip(a, b))])
        self._pa = np.array(pa, dtype=np.intp)
        self._pb = np.array(pb, dtype=np.intp)
        scatter = np.zeros((len(pa), self.size))
        scatter[np.arange(len(pa)), pc] = 1.0
        self._scatter = scatter

    def __repr__(self) -> str:
        return f"JetSpace(nvars={self.nvars}, order={self.order})"

    def lower(self, order: int) -> "JetSpace":
        return jet_space(self.nvars, order)

    # -- construction -----------------------------------------------------

    def constant(self, value, shape=()) -> np.ndarray:
        value = np.asarray(value, dtype=float)
        shape = np.broadcast_shapes(np.shape(value), tuple(shape))
        c = np.zeros(shape + (self.size,))
        c[..., 0] = value
        return c

    def variable(self, value, v: int) -> np.ndarray:
        """Jet of the coordinate function ``z_v`` expanded at ``value``."""
        c = self.constant(value)
        if self.order >= 1:
            c[..., 1 + v] = 1.0
        return c

    # -- arithmetic on coefficient arrays ---------------------------------

    def mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return (a[..., self._pa] * b[..., self._pb]) @ self._scatter

    def matmul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Product of matrix-valued jets with shapes ``(..., n, k, N)`` and ``(..., k, m, N)``."""
        prod = np.einsum("...ikp,...kjp->...ijp", a[..., self._pa], b[..., self._pb])
        return prod @ self._scatter

    def nilpotent(self, a: np.ndarray) -> np.ndarray:
        h = a.copy()
        h[..., 0] = 0.0
        return h

    def compose(self, a: np.ndarray, taylor: list[np.ndarray]) -> np.ndarray:
        """Evaluate ``f(a)`` given ``taylor[k] = f^(k)(a0)/k!`` for k = 0..order."""
        h = self.nilpotent(a)
        out = self.constant(taylor[0], a.shape[:-1])
        power = None
        for k in range(1, self.order + 1):
            power = h if power is None else self.mul(power, h)
            out = out + np.asarray(taylor[k])[..., None] * power
        return out

    def reciprocal(self, a: np.ndarray) -> np.ndarray:
        a0 = a[..., 0]
        taylor = [(-1.0) ** k / a0 ** (k + 1) for k in range(self.order + 1)]
        return self.compose(a, taylor)

    def powf(self, a: np.ndarray, alpha: float) -> np.ndarray:
        a0 = a[..., 0]
        taylor = []
        coef = 1.0
        for k in range(self.order + 1):
            taylor.append(coef * a0 ** (alpha - k))
            coef *= (alpha - k) / (k + 1)
        return self.compose(a, taylor)

    def exp(self, a: np.ndarray) -> np.ndarray:
        e0 = np.exp(a[..., 0])
        return self.compose(a, [e0 / math.factorial(k) for k in range(self.order + 1)])

    def sin(self, a: np.ndarray) -> np.ndarray:
        s, c = np.sin(a[..., 0]), np.cos(a[..., 0])
        cycle = (s, c, -s, -c)
        return self.compose(a, [cycle[k % 4] / math.factorial(k) for k in range(self.order + 1)])

    def cos(self, a: np.ndarray) -> np.ndarray:
        s, c = np.sin(a[..., 0]), np.cos(a[..., 0])
        cycle = (c, -s, -c, s)
        return self.compose(a, [cycle[k % 4] / math.factorial(k) for k in range(self.order + 1)])

    def sqrt(self, a: np.ndarray) -> np.ndarray:
        return self.powf(a, 0.5)

    def ipow(self, a: np.ndarray, n: int) -> np.ndarray:
        if n < 0:
            return self.ipow(self.reciprocal(a), -n)
        result = self.constant(1.0, a.shape[:-1])
        base = a
        while n:
            if n & 1:
                result = self.mul(result, base)
            n >>= 1
            if n:
                base = self.mul(base, base)
        return result

    def matinv(self, a: np.ndarray) -> np.ndarray:
        """Inverse of a matrix jet ``(..., n, n, N)`` by the terminating Neumann series."""
        a0inv = np.linalg.inv(a[..., 0])
        x = -np.einsum("...ij,...jkp->...ikp", a0inv, self.nilpotent(a))
        term = np.zeros(a.shape)
        term[..., 0] = a0inv
        acc = term.copy()
        for _ in range(self.order):
            term = self.matmul(x, term)
            acc = acc + term
        return acc

    # -- calculus ---------------------------------------------------------

    @functools.cached_property
    def _diff_tables(self):
        low = self.lower(self.order - 1)
        tables = []
        for v in range(self.nvars):
            src = np.empty(low.size, dtype=np.intp)
            fac = np.empty(low.size)
            for i, e in enumerate(low.monomials):
                up = list(e)
                up[v] += 1
                src[i] = self.index[tuple(up)]
                fac[i] = up[v]
            tables.append((src, fac))
        return tables

    def diff(self, a: np.ndarray, v: int) -> np.ndarray:
        """Partial derivative in variable ``v``; the result lives one order lower."""
        if self.order == 0:
            raise ValueError("cannot differentiate an order-0 jet")
        src, fac = self._diff_tables[v]
        return a[..., src] * fac

    @functools.cached_property
    def _integ_tables(self):
        tables = []
        for v in range(self.nvars):
            dst, src, fac = [], [], []
            for i, e in enumerate(self.monomials):
                if e[v] >= 1:
                    down = list(e)
                    down[v] -= 1
                    dst.append(i)
                    src.append(self.index[tuple(down)])
                    fac.append(1.0 / e[v])
            tables.append((np.array(dst, dtype=np.intp), np.array(src, dtype=np.intp), np.array(fac)))
        return tables

    def integrate(self, a: np.ndarray, v: int) -> np.ndarray:
        """Antiderivative in variable ``v`` vanishing at ``z_v = 0``, truncated to this order."""
        dst, src, fac = self._integ_tables[v]
        out = np.zeros(a.shape)
        out[..., dst] = a[..., src] * fac
        return out

    def lift(self, a: np.ndarray, target: "JetSpace") -> np.ndarray:
        """Re-index a jet into a space with extra trailing variables (on which it does not depend)."""
        if target.nvars < self.nvars or target.order < self.order:
            raise ValueError("target space must contain this space")
        pad = (0,) * (target.nvars - self.nvars)
        idx = np.array([target.index[e + pad] for e in self.monomials], dtype=np.intp)
        out = np.zeros(a.shape[:-1] + (target.size,))
        out[..., idx] = a
        return out

    def truncate(self, a: np.ndarray, order: int) -> np.ndarray:
        return a[..., : jet_space(self.nvars, order).size]

    def derivative(self, a: np.ndarray, beta) -> np.ndarray:
        """The partial derivative ``d^beta`` at the expansion point."""
        i = self.index[tuple(beta)]
        return a[..., i] * self.factorial[i]

    def linear_substitute(self, a: np.ndarray, lin: np.ndarray) -> np.ndarray:
        """Re-expand a jet under the linear change of variables ``z = lin @ w``."""
        vars_w = [np.zeros(self.size) for _ in range(self.nvars)]
        for v in range(self.nvars):
            for u in range(self.nvars):
                if self.order >= 1:
                    vars_w[v][1 + u] = lin[v, u]
        powers = []
        for v in range(self.nvars):
            p = [self.constant(1.0)]
            for _ in range(self.order):
                p.append(self.mul(p[-1], vars_w[v]))
            powers.append(p)
        out = np.zeros(a.shape)
        for i, e in enumerate(self.monomials):
            mono = self.constant(1.0)
            for v, ev in enumerate(e):
                if ev:
                    mono = self.mul(mono, powers[v][ev])
            out = out + a[..., i, None] * mono
        return out


@functools.lru_cache(maxsize=None)
def jet_space(nvars: int, order: int) -> JetSpace:
    return JetSpace(nvars, order)


class Jet:
    """Scalar jet with operator overloading, used by the expression evaluator."""

    __slots__ = ("space", "c")
    __array_priority__ = 1000

    def __init__(self, space: JetSpace, c: np.ndarray):
        self.space = space
        self.c = c

    @classmethod
    def variable(cls, space: JetSpace, value, v: int) -> "Jet":
        return cls(space, space.variable(value, v))

    @classmethod
    def constant(cls, space: JetSpace, value) -> "Jet":
        return cls(space, space.constant(value))

    @property
    def value(self):
        return self.c[..., 0]

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, Jet):
            return other.c
        return self.space.constant(other, self.c.shape[:-1])

    def __add__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.c + other.c)
        c = self.c.copy()
        c[..., 0] += other
        return Jet(self.space, c)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.c)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            return Jet(self.space, self.space.mul(self.c, other.c))
        return Jet(self.space, self.c * np.asarray(other)[..., None])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * Jet(self.space, self.space.reciprocal(other.c))
        return Jet(self.space, self.c / np.asarray(other)[..., None])

    def __rtruediv__(self, other):
        return Jet(self.space, self.space.reciprocal(self.c)) * other

    def __pow__(self, n: int):
        return Jet(self.space, self.space.ipow(self.c, int(n)))

    def diff(self, v: int) -> "Jet":
        return Jet(self.space.lower(self.space.order - 1), self.space.diff(self.c, v))

    def truncate(self, order: int) -> "Jet":
        return Jet(self.space.lower(order), self.space.truncate(self.c, order))


def _lift(fn_jet, fn_float):
    def apply(u):
        if isinstance(u, Jet):
            return Jet(u.space, fn_jet(u.space, u.c))
        return fn_float(u)

    return apply


exp = _lift(JetSpace.exp, np.exp)
sin = _lift(JetSpace.sin, np.sin)
cos = _lift(JetSpace.cos, np.cos)
sqrt = _lift(JetSpace.sqrt, np.sqrt)
