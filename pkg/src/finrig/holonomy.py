"""Loop families, composed nonlinear parallel transports, and sampling of the
holonomy orbit of a unit vector on the indicatrix.

Transitivity is reported as evidence, never proof: a finite orbit sample
cannot decide density.  Orbit generation applies each sampled loop word to
every vector already in the pool (fiber-batched), so the pool doubles per
round and every point is the image of y0 under a composition of sampled
words.  Generation is single-threaded and deterministic given the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartExit, MetricDegenerate, StepLimitExceeded
from .geometry import FinslerMetric, SlitTangentPoint, _f_value, check_point
from .dynamics import (
    GeodesicSegment,
    IntegratorConfig,
    PiecewiseCurve,
    circle_loop,
    integrate_flow,
    polygon_loop,
    rectangle_loop,
    spray_field,
    transport_batch,
)

TRANSITIVE_EVIDENCE = "TRANSITIVE_EVIDENCE"
NOT_TRANSITIVE = "NOT_TRANSITIVE"
INCONCLUSIVE = "INCONCLUSIVE"

LOOP_KINDS = ("coordinate-rectangles", "geodesic-polygons", "random-piecewise")


@dataclass
class LoopFamily:
    """A seeded family of piecewise-smooth loops based at one chart point."""

    kind: str = "coordinate-rectangles"
    edge: float = 0.2
    vertices: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.kind not in LOOP_KINDS:
            raise ValueError(f"unknown loop kind {self.kind!r}; choose from {LOOP_KINDS}")


@dataclass
class OrbitSample:
    """Holonomy-orbit points of a unit vector, with bookkeeping for verdicts."""

    point: np.ndarray
    y0: np.ndarray
    points: np.ndarray            # (count, n), indicatrix points
    word_lengths: np.ndarray      # loops composed per point
    f_values: np.ndarray          # F(p, point) per orbit point
    indicatrix_ref: np.ndarray    # deterministic reference sample of {F(p, .) = 1}
    words_skipped: int = 0

    @property
    def count(self):
        return self.points.shape[0]

    @property
    def f_drift_max(self):
        return float(np.max(np.abs(self.f_values - 1.0))) if self.count else 0.0


def _shoot_geodesic_edge(m, x0, x1, cfg):
    """Initial velocity v with exp_{x0}(v) = x1, by Newton shooting on the endpoint map."""
    n = len(x0)
    v = np.asarray(x1, dtype=float) - np.asarray(x0, dtype=float)
    sf = spray_field(m)

    def endpoint(vel):
        z = integrate_flow(sf, SlitTangentPoint(x0, vel), 1.0, cfg)
        return z.x

    for _ in range(12):
        err = endpoint(v) - x1
        if np.linalg.norm(err) < 1e-11:
            break
        h = 1e-6 * max(1.0, np.linalg.norm(v))
        Jac = np.empty((n, n))
        for j in range(n):
            dv = np.zeros(n)
            dv[j] = h
            Jac[:, j] = (endpoint(v + dv) - endpoint(v - dv)) / (2 * h)
        v = v - np.linalg.solve(Jac, err)
    return v


def sample_loop(m: FinslerMetric, family: LoopFamily, p, rng, cfg=None) -> PiecewiseCurve:
    """Draw one loop of the family based at p.

    Loops are consistently oriented (counterclockwise in their 2-plane) so
    that composed transports accumulate curvature instead of cancelling.
    """
    p = np.asarray(p, dtype=float)
    n = p.shape[0]
    if family.kind == "coordinate-rectangles":
        i, j = (rng.choice(n, size=2, replace=False) if n > 1 else (0, 0))
        i, j = int(min(i, j)), int(max(i, j))
        a = family.edge * rng.uniform(0.5, 1.0)
        b = family.edge * rng.uniform(0.5, 1.0)
        return rectangle_loop(p, i, j, a, b)
    offsets = [family.edge * rng.uniform(0.4, 1.0) * _unit(rng, n)
               for _ in range(max(2, family.vertices - 1))]
    # order vertices by angle in the leading coordinate 2-plane
    offsets.sort(key=lambda o: math.atan2(o[1], o[0]) if n > 1 else 0.0)
    verts = [p] + [p + o for o in offsets]
    if family.kind == "random-piecewise":
        return polygon_loop(verts)
    # geodesic-polygons: same vertices, edges solved as geodesic arcs
    cfg = cfg or IntegratorConfig()
    segs = []
    for k in range(len(verts)):
        x0, x1 = verts[k], verts[(k + 1) % len(verts)]
        v = _shoot_geodesic_edge(m, x0, x1, cfg)
        segs.append(GeodesicSegment(x0, v, 1.0))
    return PiecewiseCurve(segs)


def _unit(rng, n):
    u = rng.standard_normal(n)
    return u / np.linalg.norm(u)


def loop_transport(m: FinslerMetric, loop: PiecewiseCurve, y0, cfg=None) -> np.ndarray:
    """Holonomy image of y0 around one closed loop."""
    start = loop.start()
    y1 = transport_batch(m, loop, np.asarray(y0, dtype=float), cfg)
    del start
    return y1


def _indicatrix_reference(m, p, count=512):
    """Deterministic reference sample of the unit level set {F(p, .) = 1}."""
    n = len(p)
    if n == 2:
        ang = np.linspace(0.0, 2 * math.pi, count, endpoint=False)
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        # Fibonacci lattice on S^{n-1} for n=3; seeded normals otherwise
        if n == 3:
            k = np.arange(count)
            phi = math.pi * (3.0 - math.sqrt(5.0)) * k
            z = 1.0 - 2.0 * (k + 0.5) / count
            r = np.sqrt(1.0 - z * z)
            dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        else:
            rng = np.random.default_rng(0)
            dirs = rng.standard_normal((count, n))
            dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    out = np.empty_like(dirs)
    for i, d in enumerate(dirs):
        out[i] = d / float(_f_value(m, p, d))
    return out


def holonomy_orbit(m: FinslerMetric, p, y0, family: LoopFamily, count: int,
                   cfg=None, max_word: int = 6, deepen: int = 48) -> OrbitSample:
    """Sample ``count`` points of the holonomy orbit of y0 on the indicatrix.

    y0 is renormalized to F(p, y0) = 1 first.  Each round draws one random
    word and transports the running batch (extended by a fresh copy of y0)
    through it, so the pool collects all suffix compositions of the sampled
    words; small default loops then still accumulate enough curvature to
    wrap the indicatrix.  ``deepen`` sets a minimum number of rounds: once
    the pool is full, new batches replace the oldest points (never y0).
    Deterministic given the family seed; words whose transport leaves the
    chart are counted as skipped, not fatal.
    """
    p = np.asarray(p, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    check_point(m, SlitTangentPoint(p, y0))
    y0 = y0 / float(_f_value(m, p, y0))
    rng = np.random.default_rng(family.seed)
    # transports compose up to deepen * max_word loops: integrate tighter than
    # the global default so the accumulated indicatrix drift stays below 1e-7
    cfg = cfg or IntegratorConfig(rtol=1e-10, atol=1e-12)

    pool = [y0.copy()]
    lengths = [0]
    batch = y0[None, :].copy()
    batch_len = [0]
    skipped = 0
    rounds = 0
    replace_ptr = 1
    while (len(pool) < count or rounds < deepen) and skipped < 64:
        wl = int(rng.integers(1, max_word + 1))
        loops = [sample_loop(m, family, p, rng, cfg) for _ in range(wl)]
        seed_batch = np.vstack([batch, y0[None, :]])
        try:
            out = seed_batch
            for lp in loops:
                out = transport_batch(m, lp, out, cfg)
        except (ChartExit, MetricDegenerate, StepLimitExceeded):
            skipped += 1
            continue
        rounds += 1
        batch = out
        batch_len = [l + wl for l in batch_len] + [wl]
        for row, ln in zip(batch, batch_len):
            if len(pool) < count:
                pool.append(row.copy())
                lengths.append(ln)
            else:
                # deepening phase: overwrite stale points, keep y0 at index 0
                pool[replace_ptr] = row.copy()
                lengths[replace_ptr] = ln
                replace_ptr += 1
                if replace_ptr >= count:
                    replace_ptr = 1
    pool_arr = np.asarray(pool[:count])
    lengths = np.asarray(lengths[:count])
    fvals = np.array([float(_f_value(m, p, y)) for y in pool_arr])
    ref = _indicatrix_reference(m, p)
    return OrbitSample(point=p, y0=y0, points=pool_arr, word_lengths=lengths,
                       f_values=fvals, indicatrix_ref=ref, words_skipped=skipped)


def orbit_dimension(sample: OrbitSample, k=None, tau=0.15) -> int:
    """Modal local-PCA dimension of the orbit point cloud.

    For each point, the k nearest neighbours are centered and the dimension
    is the count of singular values above tau * sigma_1; the mode over all
    points is returned.  The default tau must sit above the curvature sag of
    the indicatrix at the sampled neighbour spans (~0.26 times the span in
    radians) and far above integrator noise (~1e-7), hence 0.15.
    """
    pts = sample.points
    count = pts.shape[0]
    if count < 2:
        return 0
    if k is None:
        k = min(16, max(1, count // 8))
    if count < k + 1:
        raise ValueError(f"orbit sample of {count} points cannot support k={k} neighbours")
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    dims = np.empty(count, dtype=int)
    for i in range(count):
        nbr = np.argpartition(d2[i], k)[:k]
        local = pts[nbr] - pts[nbr].mean(axis=0)
        s = np.linalg.svd(local, compute_uv=False)
        if s.size == 0 or s[0] <= 1e-12 * max(1.0, np.linalg.norm(pts[i])):
            dims[i] = 0
        else:
            dims[i] = int(np.sum(s > tau * s[0]))
    vals, counts = np.unique(dims, return_counts=True)
    return int(vals[np.argmax(counts)])


def _vote_fraction(sample, dim, k, tau):
    pts = sample.points
    count = pts.shape[0]
    if count < 2:
        return 1.0
    if k is None:
        k = min(16, max(1, count // 8))
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    votes = 0
    for i in range(count):
        nbr = np.argpartition(d2[i], k)[:k]
        local = pts[nbr] - pts[nbr].mean(axis=0)
        s = np.linalg.svd(local, compute_uv=False)
        di = 0 if (s.size == 0 or s[0] <= 1e-12) else int(np.sum(s > tau * s[0]))
        votes += di == dim
    return votes / count


def max_angular_gap(points) -> float:
    """Largest angular gap between 2-d orbit points (covering statistic, n=2)."""
    ang = np.sort(np.arctan2(points[:, 1], points[:, 0]))
    if ang.size == 1:
        return 2 * math.pi
    gaps = np.diff(ang, append=ang[0] + 2 * math.pi)
    return float(np.max(gaps))


def covering_radius(points, ref) -> float:
    d2 = np.sum((ref[:, None, :] - points[None, :, :]) ** 2, axis=2)
    return float(np.sqrt(np.max(np.min(d2, axis=1))))


def transitivity_verdict(sample: OrbitSample, dim_estimate: int, k=None, tau=0.15):
    """(verdict, stats): evidence for/against holonomy transitivity on the indicatrix.

    TRANSITIVE_EVIDENCE needs the modal dimension n-1 plus a covering pass
    (max angular gap < 2*pi/10 for n = 2; covering radius < diameter/5 above).
    NOT_TRANSITIVE needs dimension < n-1 with a clear margin (>= 60% of local
    votes, or an orbit collapsed to a point).  Everything else is inconclusive.
    """
    n = sample.y0.shape[0]
    pts = sample.points
    stats = {"dimension": int(dim_estimate), "count": int(sample.count),
             "f_drift_max": sample.f_drift_max,
             "words_skipped": int(sample.words_skipped)}
    spread = float(np.max(np.linalg.norm(pts - pts[0], axis=1))) if sample.count else 0.0
    stats["spread"] = spread

    if n == 2:
        gap = max_angular_gap(pts)
        stats["max_angular_gap"] = gap
        covering_ok = gap < 2 * math.pi / 10.0
    else:
        ref = sample.indicatrix_ref
        diam = float(np.max(np.linalg.norm(ref[:, None, :] - ref[None, :, :], axis=2)))
        cr = covering_radius(pts, ref)
        stats["covering_radius"] = cr
        stats["indicatrix_diameter"] = diam
        covering_ok = cr < diam / 5.0
    stats["covering_ok"] = bool(covering_ok)

    if dim_estimate == n - 1 and covering_ok:
        return TRANSITIVE_EVIDENCE, stats
    if spread < 1e-8:
        stats["vote_fraction"] = 1.0
        return NOT_TRANSITIVE, stats
    if dim_estimate < n - 1:
        frac = _vote_fraction(sample, dim_estimate, k, tau)
        stats["vote_fraction"] = frac
        if frac >= 0.6:
            return NOT_TRANSITIVE, stats
    return INCONCLUSIVE, stats
