"""Metric data model and the derivation chain F -> energy -> fundamental tensor
-> spray -> nonlinear connection -> horizontal/vertical lifts.

Conventions (fixed once, validated against independent oracles in the tests):
  * energy E = F^2 / 2
  * spray coefficients G^i = 1/2 g^{ih} (d^2E/dy^h dx^j * y^j - dE/dx^h),
    so geodesics solve xdd^i + 2 G^i(x, xd) = 0 and the Riemannian reduction
    gives G^i = 1/2 Gamma^i_jk y^j y^k
  * nonlinear connection N^i_j = dG^i/dy^j
  * horizontal lift of X is (X; -N X), i.e. b^j = -N^j_i X^i
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MetricDegenerate, OutsideChart, SlitViolation
from .jets import Jet, get_space

_PIVOT_REL = 1e-12
_SLIT_EPS = 1e-12


class ChartDomain:
    """A single coordinate box with an optional exclusion predicate."""

    def __init__(self, lower, upper, exclusion=None, name=""):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.ndim != 1 or self.lower.shape != self.upper.shape:
            raise ValueError("chart bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("chart bounds must be finite")
        if np.any(self.upper <= self.lower):
            raise ValueError("chart upper bounds must exceed lower bounds")
        self.exclusion = exclusion
        self.name = name

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != self.lower.shape or not np.all(np.isfinite(x)):
            return False
        if np.any(x < self.lower) or np.any(x > self.upper):
            return False
        if self.exclusion is not None and self.exclusion(x):
            return False
        return True

    def interior_box(self, margin_frac=0.1):
        """Bounds inset by a fraction of the box width, for sampling plans."""
        width = self.upper - self.lower
        return self.lower + margin_frac * width, self.upper - margin_frac * width


@dataclass(frozen=True)
class SlitTangentPoint:
    """A point (x, y) of the slit tangent bundle in chart coordinates."""

    x: np.ndarray
    y: np.ndarray

    def __init__(self, x, y):
        object.__setattr__(self, "x", np.asarray(x, dtype=float))
        object.__setattr__(self, "y", np.asarray(y, dtype=float))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    @staticmethod
    def from_array(z) -> "SlitTangentPoint":
        z = np.asarray(z, dtype=float)
        n = z.shape[0] // 2
        return SlitTangentPoint(z[:n], z[n:])


@dataclass(frozen=True)
class BundleTangentVector:
    """A tangent vector (a; b) of the slit bundle at a SlitTangentPoint."""

    base: SlitTangentPoint
    a: np.ndarray
    b: np.ndarray

    def __init__(self, base, a, b):
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "a", np.asarray(a, dtype=float))
        object.__setattr__(self, "b", np.asarray(b, dtype=float))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


@dataclass(frozen=True)
class SprayData:
    """Spray coefficients G and nonlinear connection N = dG/dy at one point."""

    G: np.ndarray
    N: np.ndarray


class FinslerMetric:
    """A Finsler norm on a single chart, given as a scalar-generic evaluator.

    Parameters
    ----------
    chart : ChartDomain
    fn : callable
        ``fn(x, y) -> scalar`` where ``x`` and ``y`` are length-n lists whose
        entries are floats or :class:`~finrig.jets.Jet` scalars.  The evaluator
        must be built from +, -, *, /, ** and the helpers in ``finrig.jets``
        (sqrt, exp, log, sin, cos) so that nested differentiation is exact.
    name, params : metadata echoed into reports.
    """

    def __init__(self, chart: ChartDomain, fn, name="", params=None):
        self.chart = chart
        self.fn = fn
        self.name = name
        self.params = dict(params or {})

    @property
    def n(self) -> int:
        return self.chart.n

    def __repr__(self):
        return f"FinslerMetric({self.name or 'anonymous'}, n={self.n})"


def check_point(m: FinslerMetric, p: SlitTangentPoint):
    if p.x.shape[0] != m.n or p.y.shape[0] != m.n:
        raise ValueError(f"point dimension {p.x.shape[0]} does not match metric (n={m.n})")
    if float(np.linalg.norm(p.y)) <= _SLIT_EPS:
        raise SlitViolation("fiber vector is zero (slit condition)")
    if not m.chart.contains(p.x):
        raise OutsideChart(f"base point {p.x} outside chart")


def evaluate_metric(m: FinslerMetric, p: SlitTangentPoint) -> float:
    check_point(m, p)
    val = float(m.fn(list(p.x), list(p.y)))
    if not np.isfinite(val) or val <= 0.0:
        raise MetricDegenerate(f"F={val} at {p}")
    return val


def _f_value(m, x, y):
    """Metric value without point validation (internal fast path)."""
    return m.fn(list(np.asarray(x, dtype=float)), list(np.asarray(y, dtype=float)))


def _xy_seeds(m, x, y, order):
    """Seed jets for the 2n chart variables; y rows may be batched (B,)."""
    n = m.n
    sp = get_space(2 * n, order)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        xj = [Jet.variable(sp, i, x[i]) for i in range(n)]
    else:
        xj = [Jet.variable(sp, i, x[:, i]) for i in range(n)]
    if y.ndim == 1:
        yj = [Jet.variable(sp, n + i, y[i]) for i in range(n)]
    else:
        yj = [Jet.variable(sp, n + i, y[:, i]) for i in range(n)]
    return sp, xj, yj


def energy_jet(m, x, y, order) -> Jet:
    """E = F^2/2 as a jet in the 2n variables (x, y), truncation ``order``."""
    _, xj, yj = _xy_seeds(m, x, y, order)
    F = m.fn(xj, yj)
    return F * F * 0.5


def f_jet(m, x, y, order) -> Jet:
    _, xj, yj = _xy_seeds(m, x, y, order)
    return m.fn(xj, yj)


def dF(m: FinslerMetric, p: SlitTangentPoint) -> np.ndarray:
    """The differential of F at p as a 2n-covector (dF/dx; dF/dy)."""
    check_point(m, p)
    return f_jet(m, p.x, p.y, 1).gradient()


def df_pairing(df_cov, vec: BundleTangentVector) -> float:
    return float(df_cov @ vec.as_array())


def df_residual(df_cov, varr) -> float:
    """Relative annihilation residual |dF(v)| / (|dF| |v|), 0 for zero v."""
    nv = float(np.linalg.norm(varr))
    nd = float(np.linalg.norm(df_cov))
    if nv == 0.0 or nd == 0.0:
        return 0.0
    return abs(float(df_cov @ varr)) / (nd * nv)


def fundamental_tensor(m: FinslerMetric, p: SlitTangentPoint) -> np.ndarray:
    """g_ij = 1/2 d^2(F^2)/dy_i dy_j; raises MetricDegenerate if not positive definite."""
    check_point(m, p)
    n = m.n
    sp = get_space(n, 2)
    xs = list(p.x)
    ys = [Jet.variable(sp, i, p.y[i]) for i in range(n)]
    F = m.fn(xs, ys)
    E = F * F * 0.5
    g = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            mono = [0] * n
            mono[i] += 1
            mono[j] += 1
            c = float(E.coeff(mono))
            g[i, j] = g[j, i] = c * (2.0 if i == j else 1.0)
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise MetricDegenerate(f"fundamental tensor not positive definite at x={p.x}, y={p.y}")
    return g


def _jet_solve(gmat, rhs, n):
    """Solve g u = rhs over the jet ring (no pivoting: g is PD at the value level)."""
    a = [[gmat[i][j] for j in range(n)] for i in range(n)]
    b = list(rhs)
    scale = max(float(np.max(np.abs(np.asarray(a[i][j].value)))) for i in range(n) for j in range(n))
    for k in range(n):
        piv = a[k][k]
        pval = np.asarray(piv.value)
        if np.any(np.abs(pval) < _PIVOT_REL * scale):
            raise MetricDegenerate("fundamental tensor numerically singular")
        inv = piv.reciprocal()
        for r in range(k + 1, n):
            f = a[r][k] * inv
            for c in range(k, n):
                a[r][c] = a[r][c] - f * a[k][c]
            b[r] = b[r] - f * b[k]
    out = [None] * n
    for k in range(n - 1, -1, -1):
        acc = b[k]
        for c in range(k + 1, n):
            acc = acc - a[k][c] * out[c]
        out[k] = acc * a[k][k].reciprocal()
    return out


def spray_jets(m, x, y, order):
    """Spray coefficients G as jets of degree order-2 in the 2n variables.

    One evaluation yields G, N = dG/dy, and their higher derivatives: the
    degree-d coefficients of the returned jets are exact Taylor data of G.
    Checks positive definiteness of g at the value level.
    """
    if order < 2:
        raise ValueError("spray_jets needs order >= 2")
    n = m.n
    E = energy_jet(m, x, y, order)
    kt = order - 2
    Ey = [E.derivative(n + h) for h in range(n)]
    gmat = [[Ey[h].derivative(n + k) for k in range(n)] for h in range(n)]

    v00 = np.asarray(gmat[0][0].value)
    gval = np.empty(v00.shape + (n, n))
    for i in range(n):
        for j in range(n):
            gval[..., i, j] = np.asarray(gmat[i][j].value)
    try:
        np.linalg.cholesky(0.5 * (gval + np.swapaxes(gval, -1, -2)))
    except np.linalg.LinAlgError:
        raise MetricDegenerate(f"fundamental tensor not positive definite at x={x}")

    sp_small = get_space(2 * n, kt)
    yarr = np.asarray(y, dtype=float)
    y_small = [Jet.variable(sp_small, n + i, yarr[..., i]) for i in range(n)]
    rhs = []
    for h in range(n):
        acc = Ey[h].derivative(0) * y_small[0]
        for j in range(1, n):
            acc = acc + Ey[h].derivative(j) * y_small[j]
        rhs.append(acc - E.derivative(h).truncate(kt))
    u = _jet_solve(gmat, rhs, n)
    return [ui * 0.5 for ui in u]


def spray_coefficients(m: FinslerMetric, p: SlitTangentPoint) -> SprayData:
    check_point(m, p)
    G = spray_jets(m, p.x, p.y, 3)
    n = m.n
    sp = G[0].space
    Gv = np.array([float(g.value) for g in G])
    N = np.array([[float(G[i].c[sp.var_pos[n + j]]) for j in range(n)] for i in range(n)])
    return SprayData(Gv, N)


def spray_values(m, x, y) -> np.ndarray:
    """G only (no connection); cheapest path, used by geodesic integration."""
    G = spray_jets(m, x, y, 2)
    return np.array([float(g.value) for g in G])


def connection(m, x, y) -> np.ndarray:
    return spray_coefficients(m, SlitTangentPoint(x, y)).N


def connection_jets(m, x, y, deg):
    """N^i_j as an n x n nested list of jets of degree ``deg`` around (x, y)."""
    n = m.n
    G = spray_jets(m, x, y, deg + 3)
    return [[G[i].derivative(n + j) for j in range(n)] for i in range(n)]


def connection_batch(m, x, Y) -> np.ndarray:
    """Connection values at a shared or batched base point x and fiber batch Y (B, n).

    Returns an array of shape (B, n, n).
    """
    n = m.n
    Y = np.asarray(Y, dtype=float)
    B = Y.shape[0]
    G = spray_jets(m, x, Y, 3)
    sp = G[0].space
    N = np.empty((B, n, n))
    for i in range(n):
        for j in range(n):
            N[:, i, j] = np.asarray(G[i].c[sp.var_pos[n + j]])
    return N


def connection_and_grad_batch(m, X, Y):
    """Batched N (B,n,n) and dN/dz (B,n,n,2n) from one degree-4 evaluation."""
    n = m.n
    Y = np.asarray(Y, dtype=float)
    B = Y.shape[0]
    G = spray_jets(m, X, Y, 4)
    Njets = [[G[i].derivative(n + j) for j in range(n)] for i in range(n)]
    sp = Njets[0][0].space
    N = np.empty((B, n, n))
    dN = np.empty((B, n, n, 2 * n))
    for i in range(n):
        for j in range(n):
            c = Njets[i][j].c
            N[:, i, j] = np.asarray(c[0])
            for k in range(2 * n):
                dN[:, i, j, k] = np.asarray(c[sp.var_pos[k]])
    return N, dN


def horizontal_lift(m: FinslerMetric, p: SlitTangentPoint, X) -> BundleTangentVector:
    """The horizontal lift (X; -N X) at p."""
    X = np.asarray(X, dtype=float)
    N = spray_coefficients(m, p).N
    return BundleTangentVector(p, X, -N @ X)


def vertical_lift(p: SlitTangentPoint, X) -> BundleTangentVector:
    return BundleTangentVector(p, np.zeros(p.n), np.asarray(X, dtype=float))


def liouville_field(p: SlitTangentPoint) -> BundleTangentVector:
    """The radial fiber field (0; y) at p."""
    return BundleTangentVector(p, np.zeros(p.n), p.y.copy())
