"""Truncated multivariate Taylor scalars: forward-mode AD to arbitrary order.

A :class:`Jet` holds the coefficients of a polynomial in ``nvars`` displacement
variables truncated at a fixed total degree.  Arithmetic on jets propagates
Taylor coefficients exactly, so after evaluating a smooth expression on seeded
jets the coefficient of a monomial h^alpha equals (1/alpha!) times the
corresponding partial derivative.  Coefficient arrays may carry one trailing
batch axis; every operation then applies elementwise across the batch, which
is how fiber-batched ODE right-hand sides are evaluated cheaply.
"""

from __future__ import annotations

from itertools import combinations_with_replacement

import numpy as np

_SPACES: dict[tuple[int, int], "JetSpace"] = {}


def _monomials(nvars, order):
    monos = []
    for deg in range(order + 1):
        for combo in combinations_with_replacement(range(nvars), deg):
            m = [0] * nvars
            for v in combo:
                m[v] += 1
            monos.append(tuple(m))
    return monos


class JetSpace:
    """Index tables for jets in ``nvars`` variables truncated at total degree ``order``.

    Spaces of lower order share the monomial enumeration as a prefix, so
    truncation and differentiation are plain slices / index maps.
    """

    def __init__(self, nvars: int, order: int):
        self.nvars = nvars
        self.order = order
        self.monos = _monomials(nvars, order)
        self.nmono = len(self.monos)
        self.index = {m: i for i, m in enumerate(self.monos)}
        degs = np.array([sum(m) for m in self.monos])
        self.degree = degs
        # offsets[d] = number of monomials of degree < d
        self.offsets = np.searchsorted(degs, np.arange(order + 2))
        self.var_pos = [self.index[tuple(1 if k == i else 0 for k in range(nvars))]
                        for i in range(nvars)] if order >= 1 else []

        # ordered-pair product table, grouped by output monomial for reduceat
        ia, ib, io = [], [], []
        for i, ma in enumerate(self.monos):
            da = degs[i]
            jmax = int(self.offsets[order - da + 1])
            for j in range(jmax):
                mb = self.monos[j]
                io.append(self.index[tuple(a + b for a, b in zip(ma, mb))])
                ia.append(i)
                ib.append(j)
        io = np.asarray(io)
        perm = np.argsort(io, kind="stable")
        self.mul_a = np.asarray(ia)[perm]
        self.mul_b = np.asarray(ib)[perm]
        # every output index occurs (the (const, m) pair), so segments are non-empty
        self.mul_starts = np.searchsorted(io[perm], np.arange(self.nmono))

        # differentiation tables: d/dv maps monomial m -> m - e_v with factor m[v]
        self.diff_src, self.diff_dst, self.diff_fac = [], [], []
        for v in range(nvars):
            src, dst, fac = [], [], []
            for i, m in enumerate(self.monos):
                if m[v] > 0:
                    lower = list(m)
                    lower[v] -= 1
                    src.append(i)
                    dst.append(self.index[tuple(lower)])
                    fac.append(float(m[v]))
            self.diff_src.append(np.asarray(src, dtype=np.intp))
            self.diff_dst.append(np.asarray(dst, dtype=np.intp))
            self.diff_fac.append(np.asarray(fac))


def get_space(nvars: int, order: int) -> JetSpace:
    key = (nvars, order)
    sp = _SPACES.get(key)
    if sp is None:
        sp = _SPACES[key] = JetSpace(nvars, order)
    return sp


def _pair(ca, cb):
    # align a scalar-tailed (nmono,) array with a batched (nmono, B) one
    if ca.ndim == cb.ndim:
        return ca, cb
    if ca.ndim < cb.ndim:
        return ca[:, None], cb
    return ca, cb[:, None]


class Jet:
    __slots__ = ("space", "c")

    def __init__(self, space: JetSpace, coeffs: np.ndarray):
        self.space = space
        self.c = coeffs

    # -- constructors ------------------------------------------------------

    @staticmethod
    def constant(space, value):
        value = np.asarray(value, dtype=float)
        c = np.zeros((space.nmono,) + value.shape)
        c[0] = value
        return Jet(space, c)

    @staticmethod
    def variable(space, i, value):
        j = Jet.constant(space, value)
        if space.order >= 1:
            j.c[space.var_pos[i]] = 1.0
        return j

    # -- extraction --------------------------------------------------------

    @property
    def value(self):
        return self.c[0]

    def coeff(self, mono):
        return self.c[self.space.index[tuple(mono)]]

    def gradient(self):
        """First-order coefficients as an array of shape (nvars,) + batch."""
        return np.stack([self.c[p] for p in self.space.var_pos])

    def derivative(self, v) -> "Jet":
        sp = self.space
        small = get_space(sp.nvars, sp.order - 1)
        out = np.zeros((small.nmono,) + self.c.shape[1:])
        fac = sp.diff_fac[v]
        if self.c.ndim > 1:
            fac = fac[:, None]
        out[sp.diff_dst[v]] = self.c[sp.diff_src[v]] * fac
        return Jet(small, out)

    def truncate(self, order) -> "Jet":
        sp = self.space
        if order == sp.order:
            return self
        if order > sp.order:
            raise ValueError("cannot extend a jet")
        small = get_space(sp.nvars, order)
        return Jet(small, self.c[: small.nmono].copy())

    # -- ring operations ----------------------------------------------------

    def _add_scalar(self, s, sign=1.0):
        s = np.asarray(s, dtype=float)
        c = self.c
        if s.ndim > 0 and c.ndim == 1:
            c = np.repeat(c[:, None], s.shape[0], axis=1)
        else:
            c = c.copy()
        c[0] = c[0] + sign * s
        return Jet(self.space, c)

    def __add__(self, other):
        if isinstance(other, Jet):
            ca, cb = _pair(self.c, other.c)
            return Jet(self.space, ca + cb)
        return self._add_scalar(other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Jet):
            ca, cb = _pair(self.c, other.c)
            return Jet(self.space, ca - cb)
        return self._add_scalar(other, sign=-1.0)

    def __rsub__(self, other):
        return (-self)._add_scalar(other)

    def __neg__(self):
        return Jet(self.space, -self.c)

    def _mul_scalar(self, s):
        s = np.asarray(s, dtype=float)
        if s.ndim > 0 and self.c.ndim == 1:
            return Jet(self.space, self.c[:, None] * s)
        return Jet(self.space, self.c * s)

    def __mul__(self, other):
        if isinstance(other, Jet):
            sp = self.space
            ca, cb = _pair(self.c, other.c)
            prod = ca[sp.mul_a] * cb[sp.mul_b]
            return Jet(sp, np.add.reduceat(prod, sp.mul_starts, axis=0))
        return self._mul_scalar(other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self._mul_scalar(1.0 / np.asarray(other, dtype=float))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if isinstance(p, (int, np.integer)):
            if p < 0:
                return self.reciprocal() ** (-p)
            out = Jet.constant(self.space, 1.0)
            base = self
            k = int(p)
            while k:
                if k & 1:
                    out = out * base
                base = base * base
                k >>= 1
            return out
        u0 = self._positive_value("fractional power")
        cs = [u0 ** float(p)]
        for k in range(1, self.space.order + 1):
            cs.append(cs[-1] * (p - k + 1) / (k * u0))
        return self._compose(cs)

    # -- analytic functions -------------------------------------------------

    def _positive_value(self, what):
        u0 = np.asarray(self.value, dtype=float)
        if np.any(u0 <= 0.0):
            raise ValueError(f"jet {what} requires a positive value part")
        return u0

    def _compose(self, coeffs):
        """Evaluate sum_k coeffs[k] * (self - value)^k by Horner's rule."""
        sp = self.space
        w = Jet(sp, self.c.copy())
        w.c[0] = np.zeros_like(w.c[0])
        res = Jet.constant(sp, coeffs[-1])
        for k in range(sp.order - 1, -1, -1):
            res = res * w
            res = res._add_scalar(coeffs[k])
        return res

    def reciprocal(self):
        u0 = np.asarray(self.value, dtype=float)
        if np.any(u0 == 0.0):
            raise ZeroDivisionError("jet reciprocal at zero value part")
        cs = [1.0 / u0]
        for _ in range(self.space.order):
            cs.append(-cs[-1] / u0)
        return self._compose(cs)

    def sqrt(self):
        u0 = self._positive_value("sqrt")
        cs = [np.sqrt(u0)]
        for k in range(1, self.space.order + 1):
            cs.append(cs[-1] * (0.5 - (k - 1)) / (k * u0))
        return self._compose(cs)

    def exp(self):
        e0 = np.exp(np.asarray(self.value, dtype=float))
        cs = [e0]
        for k in range(1, self.space.order + 1):
            cs.append(cs[-1] / k)
        return self._compose(cs)

    def log(self):
        u0 = self._positive_value("log")
        cs = [np.log(u0), 1.0 / u0]
        for k in range(2, self.space.order + 1):
            cs.append(-cs[-1] * (k - 1) / (k * u0))
        return self._compose(cs)

    def sin(self):
        return self._trig(0)

    def cos(self):
        return self._trig(1)

    def _trig(self, phase):
        u0 = np.asarray(self.value, dtype=float)
        table = [np.sin(u0), np.cos(u0), -np.sin(u0), -np.cos(u0)]
        cs = []
        fact = 1.0
        for k in range(self.space.order + 1):
            if k > 1:
                fact *= k
            cs.append(table[(k + phase) % 4] / fact)
        return self._compose(cs)

    def __repr__(self):
        return f"Jet(order={self.space.order}, nvars={self.space.nvars}, value={self.value})"


# scalar/jet dispatch helpers used by metric evaluators and the expression grammar

def sqrt(u):
    return u.sqrt() if isinstance(u, Jet) else np.sqrt(u)


def exp(u):
    return u.exp() if isinstance(u, Jet) else np.exp(u)


def log(u):
    return u.log() if isinstance(u, Jet) else np.log(u)


def sin(u):
    return u.sin() if isinstance(u, Jet) else np.sin(u)


def cos(u):
    return u.cos() if isinstance(u, Jet) else np.cos(u)
