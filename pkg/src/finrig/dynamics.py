"""ODE machinery on the slit tangent bundle: flows, push-forwards, Lie
brackets, geodesics and nonlinear parallel transport.

The integrator is an adaptive embedded Dormand-Prince 5(4) pair.  Transports
assume the fiber maps are smooth enough for order-5 integration.  Piecewise
curves integrate segment by segment with state handoff; geodesic edges are
co-integrated with the transported fiber so no dense output is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ChartExit, SlitViolation, StepLimitExceeded
from .geometry import (
    BundleTangentVector,
    FinslerMetric,
    SlitTangentPoint,
    check_point,
    connection_and_grad_batch,
    connection_batch,
    connection_jets,
    spray_jets,
    spray_values,
)
from .jets import Jet, get_space


@dataclass
class IntegratorConfig:
    rtol: float = 1e-9
    atol: float = 1e-11
    max_steps: int = 20000
    max_time: float = math.inf

    def __post_init__(self):
        if self.rtol <= 0 or self.atol <= 0:
            raise ValueError("integrator tolerances must be positive")


_DEFAULT_CFG = IntegratorConfig()

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def _initial_step(f, t0, z0, f0, direction, rtol, atol, t_span):
    scale = atol + rtol * np.abs(z0)
    d0 = float(np.linalg.norm(z0 / scale) / math.sqrt(z0.size))
    d1 = float(np.linalg.norm(f0 / scale) / math.sqrt(z0.size))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    z1 = z0 + h0 * direction * f0
    f1 = f(t0 + h0 * direction, z1)
    d2 = float(np.linalg.norm((f1 - f0) / scale) / math.sqrt(z0.size)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, t_span)


def integrate_ode(f, z0, t0, t1, cfg=None, inside=None):
    """Integrate dz/dt = f(t, z) from t0 to t1 with the DP 5(4) pair.

    ``inside(z) -> bool`` is checked after every accepted step; a violation
    raises :class:`ChartExit` with a bisected exit-time estimate.
    """
    cfg = cfg or _DEFAULT_CFG
    z0 = np.asarray(z0, dtype=float)
    span = t1 - t0
    if span == 0.0:
        return z0.copy()
    if abs(span) > cfg.max_time:
        raise ValueError(f"requested time {span} exceeds max_time={cfg.max_time}")
    direction = 1.0 if span > 0 else -1.0
    t = t0
    z = z0.copy()
    k = np.empty((7, z.size))
    f0 = f(t, z)
    h = _initial_step(f, t0, z0, f0, direction, cfg.rtol, cfg.atol, abs(span))
    k1 = f0
    nsteps = 0
    while (t1 - t) * direction > 0:
        if nsteps >= cfg.max_steps:
            raise StepLimitExceeded(f"step limit {cfg.max_steps} reached at t={t:.6g}")
        h = min(h, abs(t1 - t))
        hd = h * direction
        k[0] = k1
        for s in range(1, 7):
            zs = z + hd * (k[:s].T @ _A[s])
            k[s] = f(t + _C[s] * hd, zs)
        z_new = z + hd * (k.T @ _B5)
        err_vec = hd * (k.T @ _E)
        scale = cfg.atol + cfg.rtol * np.maximum(np.abs(z), np.abs(z_new))
        err = float(np.linalg.norm(err_vec / scale) / math.sqrt(z.size))
        nsteps += 1
        if err <= 1.0:
            t_prev, z_prev = t, z
            t = t + hd
            z = z_new
            k1 = k[6]  # FSAL
            if inside is not None and not inside(z):
                t_exit = _bisect_exit(f, t_prev, z_prev, hd, inside)
                raise ChartExit(t_exit)
            fac = 0.9 * err ** -0.2 if err > 0 else 5.0
        else:
            fac = max(0.2, 0.9 * err ** -0.2)
            h = h * fac
            continue
        h = h * min(5.0, max(0.2, fac))
    return z


def _rk_probe(f, t, z, hd):
    """One fixed DP step of signed size hd (used only for exit bisection)."""
    k = np.empty((7, z.size))
    k[0] = f(t, z)
    for s in range(1, 7):
        zs = z + hd * (k[:s].T @ _A[s])
        k[s] = f(t + _C[s] * hd, zs)
    return z + hd * (k.T @ _B5)


def _bisect_exit(f, t_prev, z_prev, hd, inside):
    lo, hi = 0.0, 1.0
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        if inside(_rk_probe(f, t_prev, z_prev, mid * hd)):
            lo = mid
        else:
            hi = mid
    return t_prev + hi * hd


# ---------------------------------------------------------------------------
# bundle vector fields


class BundleVectorField:
    """A vector field on the slit bundle with exact derivatives via jets.

    ``kind`` is one of "spray", "hlift", "vlift", "liouville", "custom".
    Horizontal/vertical lifts carry a base field: either an integer
    (coordinate field index) or a callable mapping the list of x-jets to a
    list of n component scalars.
    """

    def __init__(self, metric, kind, base=None, label=""):
        self.metric = metric
        self.kind = kind
        self.base = base
        self.label = label or kind

    # base-field components on plain coordinates or jets
    def _base_components(self, xs, n):
        if isinstance(self.base, (int, np.integer)):
            comps = [0.0] * n
            comps[int(self.base)] = 1.0
            return comps
        return list(self.base(xs))

    def value(self, z: SlitTangentPoint) -> BundleTangentVector:
        arr = self.value_array(z.as_array())
        n = z.n
        return BundleTangentVector(z, arr[:n], arr[n:])

    def value_array(self, zarr) -> np.ndarray:
        m = self.metric
        n = len(zarr) // 2
        x, y = zarr[:n], zarr[n:]
        if self.kind == "spray":
            return np.concatenate([y, -2.0 * spray_values(m, x, y)])
        if self.kind == "hlift":
            X = np.asarray(self._base_components(list(x), n), dtype=float)
            N = connection_batch(m, x, y[None, :])[0]
            return np.concatenate([X, -N @ X])
        if self.kind == "vlift":
            X = np.asarray(self._base_components(list(x), n), dtype=float)
            return np.concatenate([np.zeros(n), X])
        if self.kind == "liouville":
            return np.concatenate([np.zeros(n), y])
        return np.asarray([float(np.asarray(j.value)) for j in self.jet(x, y, 0)])

    def jet(self, x, y, deg):
        """All 2n components as jets of degree ``deg`` around (x, y)."""
        m = self.metric
        n = len(x)
        sp = get_space(2 * n, deg)
        xj = [Jet.variable(sp, i, x[i]) for i in range(n)]
        yj = [Jet.variable(sp, n + i, y[i]) for i in range(n)]
        zero = Jet.constant(sp, 0.0)
        if self.kind == "spray":
            G = spray_jets(m, x, y, deg + 2)
            return list(yj) + [g * (-2.0) for g in G]
        if self.kind == "hlift":
            comps = self._base_components(xj, n)
            comps = [c if isinstance(c, Jet) else Jet.constant(sp, c) for c in comps]
            N = connection_jets(m, x, y, deg)
            fiber = []
            for j in range(n):
                acc = zero
                for i in range(n):
                    acc = acc - N[j][i] * comps[i]
                fiber.append(acc)
            return comps + fiber
        if self.kind == "vlift":
            comps = self._base_components(xj, n)
            comps = [c if isinstance(c, Jet) else Jet.constant(sp, c) for c in comps]
            return [zero] * n + comps
        if self.kind == "liouville":
            return [zero] * n + list(yj)
        return list(self.base(xj + yj))  # custom: base maps 2n jets -> 2n scalars

    def value_and_jacobian(self, zarr):
        n = len(zarr) // 2
        jets = self.jet(zarr[:n], zarr[n:], 1)
        sp = jets[0].space
        val = np.array([float(np.asarray(j.value)) for j in jets])
        jac = np.array([[float(np.asarray(j.c[sp.var_pos[k]])) for k in range(2 * n)]
                        for j in jets])
        return val, jac

    def __repr__(self):
        return f"BundleVectorField({self.label})"


def spray_field(m: FinslerMetric) -> BundleVectorField:
    return BundleVectorField(m, "spray", label="spray")


def horizontal_lift_field(m: FinslerMetric, base) -> BundleVectorField:
    lbl = f"hlift[{base}]" if isinstance(base, (int, np.integer)) else "hlift"
    return BundleVectorField(m, "hlift", base=base, label=lbl)


def vertical_lift_field(m: FinslerMetric, base) -> BundleVectorField:
    lbl = f"vlift[{base}]" if isinstance(base, (int, np.integer)) else "vlift"
    return BundleVectorField(m, "vlift", base=base, label=lbl)


def liouville_vector_field(m: FinslerMetric) -> BundleVectorField:
    return BundleVectorField(m, "liouville", label="liouville")


def _inside_bundle(m):
    n = m.n

    def inside(zarr):
        x = zarr[:n]
        yflat = zarr[n:]
        if not m.chart.contains(x):
            return False
        # works for a single fiber vector or a flat batch of them
        ys = yflat.reshape(-1, n)
        return bool(np.all(np.linalg.norm(ys, axis=1) > 1e-12))

    return inside


def integrate_flow(field: BundleVectorField, z0: SlitTangentPoint, t: float,
                   cfg=None) -> SlitTangentPoint:
    """The flow of a bundle field: returns Fl^field_t(z0)."""
    m = field.metric
    check_point(m, z0)
    zf = integrate_ode(lambda _t, z: field.value_array(z), z0.as_array(), 0.0, t,
                       cfg, inside=_inside_bundle(m))
    out = SlitTangentPoint.from_array(zf)
    check_point(m, out)
    return out


def flow_pushforward(field: BundleVectorField, t: float, v: BundleTangentVector,
                     cfg=None) -> BundleTangentVector:
    """Push v forward along the flow of ``field`` for time t.

    Integrates the variational equation dJ/dt = Dfield(z) J jointly with the
    flow; the result is based at the transported point.
    """
    m = field.metric
    z0 = v.base
    check_point(m, z0)
    n = z0.n
    dim = 2 * n
    state0 = np.concatenate([z0.as_array(), v.as_array()])
    inside_z = _inside_bundle(m)

    def rhs(_t, state):
        z, J = state[:dim], state[dim:]
        val, jac = field.value_and_jacobian(z)
        return np.concatenate([val, jac @ J])

    zf = integrate_ode(rhs, state0, 0.0, t, cfg, inside=lambda s: inside_z(s[:dim]))
    base = SlitTangentPoint.from_array(zf[:dim])
    return BundleTangentVector(base, zf[dim:dim + n], zf[dim + n:])


def lie_bracket(f1: BundleVectorField, f2: BundleVectorField,
                z: SlitTangentPoint) -> BundleTangentVector:
    """[f1, f2](z) = Df2(z) f1(z) - Df1(z) f2(z), via exact jet derivatives."""
    zarr = z.as_array()
    v1, j1 = f1.value_and_jacobian(zarr)
    v2, j2 = f2.value_and_jacobian(zarr)
    out = j2 @ v1 - j1 @ v2
    n = z.n
    return BundleTangentVector(z, out[:n], out[n:])


def geodesic(m: FinslerMetric, p: SlitTangentPoint, t: float, cfg=None) -> SlitTangentPoint:
    """Integral curve of the canonical spray: geodesic with initial data p."""
    return integrate_flow(spray_field(m), p, t, cfg)


# ---------------------------------------------------------------------------
# curves and parallel transport


class LineSegment:
    """Straight chart segment from p0 to p1, parametrized on [0, 1]."""

    def __init__(self, p0, p1):
        self.p0 = np.asarray(p0, dtype=float)
        self.p1 = np.asarray(p1, dtype=float)

    def point(self, s):
        return self.p0 + s * (self.p1 - self.p0)

    def velocity(self, s):
        return self.p1 - self.p0


class ArcSegment:
    """Circular arc (2-d charts) around ``center`` from angle a0 to a1."""

    def __init__(self, center, radius, a0, a1):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.a0 = float(a0)
        self.a1 = float(a1)

    def point(self, s):
        a = self.a0 + s * (self.a1 - self.a0)
        return self.center + self.radius * np.array([math.cos(a), math.sin(a)])

    def velocity(self, s):
        a = self.a0 + s * (self.a1 - self.a0)
        da = self.a1 - self.a0
        return self.radius * da * np.array([-math.sin(a), math.cos(a)])


class GeodesicSegment:
    """A geodesic edge given by initial data; co-integrated during transport."""

    def __init__(self, x0, v0, duration=1.0):
        self.x0 = np.asarray(x0, dtype=float)
        self.v0 = np.asarray(v0, dtype=float)
        self.duration = float(duration)


class PiecewiseCurve:
    """A piecewise-smooth curve on the base manifold, one segment per piece."""

    def __init__(self, segments):
        if not segments:
            raise ValueError("curve needs at least one segment")
        self.segments = list(segments)

    def start(self):
        s0 = self.segments[0]
        return s0.x0.copy() if isinstance(s0, GeodesicSegment) else s0.point(0.0)

    def reversed(self):
        segs = []
        for s in reversed(self.segments):
            if isinstance(s, LineSegment):
                segs.append(LineSegment(s.p1, s.p0))
            elif isinstance(s, ArcSegment):
                segs.append(ArcSegment(s.center, s.radius, s.a1, s.a0))
            else:
                raise ValueError("cannot reverse a geodesic segment without re-solving")
        return PiecewiseCurve(segs)


def polygon_loop(vertices) -> PiecewiseCurve:
    """Closed polygon through the given vertices (first vertex repeated at the end)."""
    verts = [np.asarray(v, dtype=float) for v in vertices]
    segs = [LineSegment(verts[i], verts[(i + 1) % len(verts)]) for i in range(len(verts))]
    return PiecewiseCurve(segs)


def rectangle_loop(p, axis_i, axis_j, a, b) -> PiecewiseCurve:
    p = np.asarray(p, dtype=float)
    ei = np.zeros_like(p)
    ej = np.zeros_like(p)
    ei[axis_i] = 1.0
    ej[axis_j] = 1.0
    return polygon_loop([p, p + a * ei, p + a * ei + b * ej, p + b * ej])


def circle_loop(center, radius, a0=0.0, turns=1.0) -> PiecewiseCurve:
    return PiecewiseCurve([ArcSegment(center, radius, a0, a0 + turns * 2 * math.pi)])


def transport_batch(m: FinslerMetric, curve: PiecewiseCurve, Y0, cfg=None):
    """Parallel-transport a batch of fiber vectors (B, n) along ``curve``.

    Transport follows the homogeneous nonlinear rule dy/dt = -N(c(t), y) cdot(t),
    segment by segment.  Returns the transported batch (B, n).
    """
    Y = np.asarray(Y0, dtype=float).copy()
    single = Y.ndim == 1
    if single:
        Y = Y[None, :]
    B, n = Y.shape
    if np.any(np.linalg.norm(Y, axis=1) <= 1e-12):
        raise SlitViolation("transport of a zero fiber vector")
    chart = m.chart

    for seg in curve.segments:
        if isinstance(seg, GeodesicSegment):
            state0 = np.concatenate([seg.x0, seg.v0, Y.ravel()])

            def rhs(_t, state):
                x, v = state[:n], state[n:2 * n]
                ys = state[2 * n:].reshape(B, n)
                G = spray_values(m, x, v)
                N = connection_batch(m, x, ys)
                dy = -np.einsum("bij,j->bi", N, v)
                return np.concatenate([v, -2.0 * G, dy.ravel()])

            def inside(state):
                return chart.contains(state[:n])

            zf = integrate_ode(rhs, state0, 0.0, seg.duration, cfg, inside=inside)
            Y = zf[2 * n:].reshape(B, n).copy()
        else:
            if not chart.contains(seg.point(0.0)) or not chart.contains(seg.point(1.0)):
                raise ChartExit(0.0, "curve endpoint outside chart")

            def rhs(t, yflat, seg=seg):
                ys = yflat.reshape(B, n)
                N = connection_batch(m, seg.point(t), ys)
                cd = seg.velocity(t)
                return -np.einsum("bij,j->bi", N, cd).ravel()

            def inside(yflat, seg=seg):
                return bool(np.all(np.linalg.norm(yflat.reshape(B, n), axis=1) > 1e-12))

            Y = integrate_ode(rhs, Y.ravel(), 0.0, 1.0, cfg, inside=inside).reshape(B, n)
    return Y[0] if single else Y


def parallel_transport(m: FinslerMetric, curve: PiecewiseCurve, y0, cfg=None) -> np.ndarray:
    """Transport a single fiber vector along the curve; returns y(1)."""
    return transport_batch(m, curve, np.asarray(y0, dtype=float), cfg)
