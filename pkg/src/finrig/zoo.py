"""Catalog of built-in metrics with known ground truth, plus the planar
variable-rank subspace-field example.

Note on the planar example: some presentations write the first spanning
field's coefficient as a function of the first coordinate; the rank profile
implemented here (dimension 2 on y<0 and y>1, dimension 1 on 0<y<1,
dimension 0 on y in {0,1}) requires composing it with the second coordinate,
which is what this module does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .exprs import compile_expression
from .geometry import ChartDomain, FinslerMetric
from .jets import exp as jexp, sqrt as jsqrt
from .rigidity import ManifoldMap, linear_map, rotation_map


def _dot(u, v):
    acc = u[0] * v[0]
    for a, b in zip(u[1:], v[1:]):
        acc = acc + a * b
    return acc


# ---------------------------------------------------------------------------
# metric builders


def _euclidean(n=2):
    n = int(n)
    if n < 1:
        raise ConfigError("euclidean needs n >= 1")

    def fn(x, y):
        return jsqrt(_dot(y, y))

    chart = ChartDomain([-2.0] * n, [2.0] * n, name=f"R^{n} box")
    return FinslerMetric(chart, fn, name="euclidean", params={"n": n})


def _minkowski_randers(n=2, b=(0.5, 0.0)):
    n = int(n)
    b = np.asarray(b, dtype=float)
    if b.shape != (n,):
        raise ConfigError(f"drift vector must have length {n}")
    if np.linalg.norm(b) >= 1.0:
        raise ConfigError(f"|b| = {np.linalg.norm(b):.3g} must be < 1")

    def fn(x, y):
        return jsqrt(_dot(y, y)) + _dot(list(b), y)

    chart = ChartDomain([-2.0] * n, [2.0] * n, name="Minkowski box")
    return FinslerMetric(chart, fn, name="minkowski_randers",
                         params={"n": n, "b": b.tolist()})


def _riemannian_sphere(radius=1.0):
    radius = float(radius)
    if radius <= 0:
        raise ConfigError("radius must be positive")
    r2 = radius * radius

    # stereographic chart; conformal factor 2 r^2 / (r^2 + |x|^2)
    def fn(x, y):
        conf = (2.0 * r2) / (r2 + _dot(x, x))
        return conf * jsqrt(_dot(y, y))

    chart = ChartDomain([-3.5, -3.5], [3.5, 3.5],
                        exclusion=lambda x: float(x @ x) > 9.0,
                        name="stereographic chart, |x| <= 3")
    return FinslerMetric(chart, fn, name="riemannian_sphere",
                         params={"radius": radius})


def _poincare_disk():
    def fn(x, y):
        conf = 2.0 / (1.0 - _dot(x, x))
        return conf * jsqrt(_dot(y, y))

    chart = ChartDomain([-0.9, -0.9], [0.9, 0.9],
                        exclusion=lambda x: float(x @ x) > 0.81,
                        name="unit disk, |x| <= 0.9")
    return FinslerMetric(chart, fn, name="poincare_disk", params={})


def _funk_disk():
    # F blows up at the disk boundary; keep |x| <= 0.9 for integrator stability
    def fn(x, y):
        x2 = _dot(x, x)
        y2 = _dot(y, y)
        xy = _dot(x, y)
        return (jsqrt(y2 * (1.0 - x2) + xy * xy) + xy) / (1.0 - x2)

    chart = ChartDomain([-0.9, -0.9], [0.9, 0.9],
                        exclusion=lambda x: float(x @ x) > 0.81,
                        name="unit disk, |x| <= 0.9")
    return FinslerMetric(chart, fn, name="funk_disk", params={})


def _riemannian_product(factors=({"kind": "sphere", "radius": 1.0}, {"kind": "line"},)):
    """Riemannian product metric; default is sphere x line (n = 3)."""
    builders = []
    los, his, excls, dims = [], [], [], []
    for spec in factors:
        kind = spec.get("kind")
        if kind == "sphere":
            r2 = float(spec.get("radius", 1.0)) ** 2

            def fac(xs, ys, r2=r2):
                conf = (2.0 * r2) / (r2 + _dot(xs, xs))
                return conf * conf * _dot(ys, ys)

            builders.append(fac)
            los += [-3.5, -3.5]
            his += [3.5, 3.5]
            excls.append(lambda xs: float(np.dot(xs, xs)) > 9.0)
            dims.append(2)
        elif kind == "line":
            def fac(xs, ys):
                return _dot(ys, ys)

            builders.append(fac)
            los += [-2.0]
            his += [2.0]
            excls.append(lambda xs: False)
            dims.append(1)
        elif kind == "poincare":
            def fac(xs, ys):
                conf = 2.0 / (1.0 - _dot(xs, xs))
                return conf * conf * _dot(ys, ys)

            builders.append(fac)
            los += [-0.9, -0.9]
            his += [0.9, 0.9]
            excls.append(lambda xs: float(np.dot(xs, xs)) > 0.81)
            dims.append(2)
        else:
            raise ConfigError(f"unknown product factor kind {kind!r}")
    n = sum(dims)
    offsets = np.concatenate([[0], np.cumsum(dims)])

    def fn(x, y):
        acc = None
        for k, fac in enumerate(builders):
            lo, hi = offsets[k], offsets[k + 1]
            term = fac(x[lo:hi], y[lo:hi])
            acc = term if acc is None else acc + term
        return jsqrt(acc)

    def exclusion(x):
        return any(ex(x[offsets[k]:offsets[k + 1]]) for k, ex in enumerate(excls))

    chart = ChartDomain(los, his, exclusion=exclusion, name="product chart")
    return FinslerMetric(chart, fn, name="riemannian_product",
                         params={"factors": list(factors), "n": n})


def _riemannian_custom(n=2, coeffs=None, bounds=2.0):
    """Riemannian metric with coefficient matrix a(x) given as expressions.

    ``coeffs`` is an n x n nested list of expression strings in x1..xn; the
    matrix must be symmetric (entries are compared as strings after parsing).
    """
    n = int(n)
    if coeffs is None:
        raise ConfigError("riemannian_custom requires a coefficient matrix")
    if len(coeffs) != n or any(len(row) != n for row in coeffs):
        raise ConfigError(f"coefficient matrix must be {n} x {n}")
    compiled = [[compile_expression(str(coeffs[i][j]), n) for j in range(n)]
                for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if str(coeffs[i][j]).replace(" ", "") != str(coeffs[j][i]).replace(" ", ""):
                raise ConfigError(f"coefficient matrix not symmetric at ({i},{j})")

    def fn(x, y):
        acc = None
        for i in range(n):
            for j in range(n):
                term = compiled[i][j](x) * y[i] * y[j]
                acc = term if acc is None else acc + term
        return jsqrt(acc)

    b = float(bounds)
    chart = ChartDomain([-b] * n, [b] * n, name="custom chart")
    return FinslerMetric(chart, fn, name="riemannian_custom",
                         params={"n": n, "coeffs": [[str(c) for c in row] for row in coeffs],
                                 "bounds": b})


# ---------------------------------------------------------------------------
# catalog with known facts


def _euclid_maps(n):
    maps = [
        (linear_map(2.0 * np.eye(n), name="scale(2)"), "homothety"),
        (linear_map(np.eye(n), np.full(n, 0.1), name="translate(0.1)"), "isometry"),
    ]
    if n == 2:
        maps.append((rotation_map(math.pi / 5), "isometry"))
        maps.append((linear_map(np.array([[1.0, 1.0], [0.0, 1.0]]), name="shear"),
                     "affinity"))

        def cubic(xs):
            return [xs[0] + xs[0] ** 3, xs[1]]

        maps.append((ManifoldMap(cubic, 2, name="cubic-perturbation"), "none"))
    return maps


@dataclass
class ZooEntry:
    name: str
    description: str
    build: callable
    defaults: dict = field(default_factory=dict)
    expected_rank: int | None = None        # expected certified r_lo, if known
    expected_transitivity: str | None = None
    known_maps: list = field(default_factory=list)  # (ManifoldMap, expected kind)


CATALOG: dict[str, ZooEntry] = {}


def _register(entry):
    CATALOG[entry.name] = entry


_register(ZooEntry(
    name="euclidean",
    description="flat Euclidean norm on a box chart",
    build=_euclidean, defaults={"n": 2},
    expected_rank=2, expected_transitivity="NOT_TRANSITIVE",
    known_maps=_euclid_maps(2)))

_register(ZooEntry(
    name="minkowski_randers",
    description="translation-invariant Randers norm |y| + <b, y>, |b| < 1",
    build=_minkowski_randers, defaults={"n": 2, "b": (0.5, 0.0)},
    expected_rank=2, expected_transitivity="NOT_TRANSITIVE",
    known_maps=[(linear_map(np.eye(2), np.array([0.2, -0.1]), name="translate"),
                 "isometry")]))

_register(ZooEntry(
    name="riemannian_sphere",
    description="round sphere in a stereographic chart (pole disk excluded)",
    build=_riemannian_sphere, defaults={"radius": 1.0},
    expected_rank=3, expected_transitivity="TRANSITIVE_EVIDENCE",
    known_maps=[(rotation_map(math.pi / 5, name="rotation(pi/5)"), "isometry")]))

_register(ZooEntry(
    name="poincare_disk",
    description="hyperbolic plane, Poincare disk chart restricted to |x| <= 0.9",
    build=_poincare_disk, defaults={},
    expected_rank=3, expected_transitivity="TRANSITIVE_EVIDENCE",
    known_maps=[(rotation_map(math.pi / 7, name="rotation(pi/7)"), "isometry")]))

_register(ZooEntry(
    name="funk_disk",
    description="Funk metric on the unit disk (non-reversible), |x| <= 0.9",
    build=_funk_disk, defaults={},
    expected_rank=None, expected_transitivity=None,
    known_maps=[]))

_register(ZooEntry(
    name="riemannian_product",
    description="Riemannian product, default sphere x line (n = 3)",
    build=_riemannian_product,
    defaults={"factors": ({"kind": "sphere", "radius": 1.0}, {"kind": "line"})},
    expected_rank=4, expected_transitivity="NOT_TRANSITIVE",
    known_maps=[]))

_register(ZooEntry(
    name="riemannian_custom",
    description="Riemannian metric with user expression coefficients a(x)",
    build=_riemannian_custom, defaults={},
    expected_rank=None, expected_transitivity=None,
    known_maps=[]))


def make_metric(name, **params) -> FinslerMetric:
    entry = CATALOG.get(name)
    if entry is None:
        raise ConfigError(f"unknown metric {name!r}; available: {sorted(CATALOG)}")
    merged = dict(entry.defaults)
    merged.update(params)
    return entry.build(**merged)


def zoo_entries():
    return list(CATALOG.values())


# ---------------------------------------------------------------------------
# the planar variable-rank subspace field


def _h(t):
    return math.exp(-1.0 / (t * t)) if t != 0.0 else 0.0


def _h_plus(s):
    return math.exp(-1.0 / s) if s > 0.0 else 0.0


def phi_bump(t):
    """Smooth, >= 0, vanishing exactly at t = 0 and t = 1."""
    return _h(t) * _h(t - 1.0)


def psi_bump(t):
    """Smooth, >= 0, vanishing exactly on [0, 1]."""
    return _h_plus(-t) + _h_plus(t - 1.0)


def r2_field_vectors(p):
    """The two spanning fields of the planar example at p = (x, y)."""
    _, y = float(p[0]), float(p[1])
    X = np.array([psi_bump(y), 0.0])
    Y = np.array([0.0, phi_bump(y)])
    return [X, Y]


def r2_rank_map(xs, ys, tau=1e-7):
    """Integer rank grid of the planar field over the product grid xs x ys."""
    from .rank import numerical_rank

    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    out = np.empty((xs.size, ys.size), dtype=int)
    for i, xv in enumerate(xs):
        for j, yv in enumerate(ys):
            out[i, j], _ = numerical_rank(r2_field_vectors((xv, yv)), tau)
    return out


def r2_orbit_trace(p, steps, dt=0.5):
    """Alternating flow segments along the two fields, as a polyline.

    The first field's flow is exact (x advances by dt * psi(y), y fixed);
    the second is a 1-d ODE integrated adaptively.  The trace can never
    cross the critical lines y = 0 and y = 1.
    """
    from .dynamics import integrate_ode

    x, y = float(p[0]), float(p[1])
    if y in (0.0, 1.0):
        raise ValueError("trace must not start on the critical lines y = 0 or y = 1")
    pts = [np.array([x, y])]
    for _ in range(steps):
        x = x + dt * psi_bump(y)
        pts.append(np.array([x, y]))
        y = float(integrate_ode(lambda _t, s: np.array([phi_bump(s[0])]),
                                np.array([y]), 0.0, dt)[0])
        pts.append(np.array([x, y]))
    return np.asarray(pts)
