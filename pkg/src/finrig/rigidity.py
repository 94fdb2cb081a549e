"""Classification of manifold self-maps (affinity / homothety / isometry) and
assembly of the overall rigidity report.

Affinity is tested through geodesic images: a map preserves geodesics as
parametrized curves iff every image curve satisfies the geodesic equation,
so the residual xdd + 2G(x, xd) of pushed-through geodesic arcs is the
statistic.  The report never asserts non-rigidity: failing both numerical
criteria is not evidence against rigidity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ChartExit, MetricDegenerate, OutsideChart, StepLimitExceeded
from .geometry import FinslerMetric, SlitTangentPoint, _f_value, check_point, spray_values
from .dynamics import IntegratorConfig, integrate_flow, spray_field
from .jets import Jet, get_space
from .rank import CERTIFIED_MAX
from .holonomy import TRANSITIVE_EVIDENCE

_AFFINITY_TOL = 1e-5
_HOMOTHETY_TOL = 1e-6
_ISOMETRY_TOL = 1e-6


class ManifoldMap:
    """A self-map of the chart with exact first and second derivatives.

    ``fn`` maps a length-n list of scalars (floats or jets) to a length-n
    list; derivatives come from degree-2 jet evaluation.
    """

    def __init__(self, fn, n, name="", params=None):
        self.fn = fn
        self.n = n
        self.name = name or "map"
        self.params = dict(params or {})

    def value(self, x):
        return np.array([float(v) for v in self.fn(list(np.asarray(x, dtype=float)))])

    def jets(self, x, order=2):
        sp = get_space(self.n, order)
        xj = [Jet.variable(sp, i, float(x[i])) for i in range(self.n)]
        out = self.fn(xj)
        return [o if isinstance(o, Jet) else Jet.constant(sp, float(o)) for o in out]

    def jacobian(self, x):
        jets = self.jets(x, order=1)
        return np.array([j.gradient() for j in jets])

    def value_jacobian_hessian(self, x):
        """phi(x), Dphi(x) and the n x n x n array of second derivatives."""
        n = self.n
        jets = self.jets(x, order=2)
        sp = jets[0].space
        val = np.array([float(np.asarray(j.value)) for j in jets])
        jac = np.array([j.gradient() for j in jets])
        hess = np.empty((n, n, n))
        for c in range(n):
            for i in range(n):
                for j in range(i, n):
                    mono = [0] * n
                    mono[i] += 1
                    mono[j] += 1
                    coeff = float(jets[c].coeff(mono)) * (2.0 if i == j else 1.0)
                    hess[c, i, j] = hess[c, j, i] = coeff
        return val, jac, hess

    def __repr__(self):
        return f"ManifoldMap({self.name}, n={self.n})"


def linear_map(A, b=None, name="linear") -> ManifoldMap:
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    b = np.zeros(n) if b is None else np.asarray(b, dtype=float)

    def fn(xs):
        return [sum(A[i, j] * xs[j] for j in range(n)) + b[i] for i in range(n)]

    return ManifoldMap(fn, n, name=name, params={"A": A.tolist(), "b": b.tolist()})


def rotation_map(alpha, name=None) -> ManifoldMap:
    c, s = np.cos(alpha), np.sin(alpha)
    return linear_map(np.array([[c, -s], [s, c]]),
                      name=name or f"rotation({alpha:.3g})")


@dataclass
class TransformationVerdict:
    name: str
    affinity_residual_max: float
    affinity_residual_mean: float
    is_affinity: bool
    homothety_factor: float
    homothety_dispersion: float
    is_homothety: bool
    is_isometry: bool
    samples_used: int
    samples_skipped: int

    def to_dict(self):
        return {
            "name": self.name,
            "affinity_residual_max": float(self.affinity_residual_max),
            "affinity_residual_mean": float(self.affinity_residual_mean),
            "is_affinity": bool(self.is_affinity),
            "homothety_factor": float(self.homothety_factor),
            "homothety_dispersion": float(self.homothety_dispersion),
            "is_homothety": bool(self.is_homothety),
            "is_isometry": bool(self.is_isometry),
            "samples_used": int(self.samples_used),
            "samples_skipped": int(self.samples_skipped),
        }


def _sample_bundle_points(m, count, seed):
    lo, hi = m.chart.interior_box(0.15)
    pts = []
    j = 0
    attempts = 0
    while len(pts) < count and attempts < 20 * count:
        rng = np.random.default_rng([seed, j])
        j += 1
        attempts += 1
        x = lo + rng.uniform(size=m.n) * (hi - lo)
        if not m.chart.contains(x):
            continue
        y = rng.standard_normal(m.n)
        y /= np.linalg.norm(y)
        try:
            y = y / float(_f_value(m, x, y))
        except (ValueError, ZeroDivisionError):
            continue
        pts.append(SlitTangentPoint(x, y))
    return pts


def _geodesic_states(m, p, arc_time, checkpoints, cfg):
    """States (x, xd) along the geodesic through p at evenly spaced times."""
    states = [p]
    z = p
    dt = arc_time / checkpoints
    for _ in range(checkpoints):
        z = integrate_flow(spray_field(m), z, dt, cfg)
        states.append(z)
    return states


def check_affinity(m: FinslerMetric, phi: ManifoldMap, samples=48, seed=0,
                   arc_time=0.3, checkpoints=4, cfg=None):
    """Geodesic-image residual statistics for phi.

    Pushes sampled geodesic arcs through phi and evaluates the geodesic
    equation residual of the image, cdd + 2G(c, cd), where
    cdd = D2phi(xd, xd) - 2 Dphi G(x, xd).  Residuals are normalized by
    max(1, |Dphi xd|^2) since they are 2-homogeneous in the velocity.
    Returns a dict with max/mean residual and sample counts.
    """
    cfg = cfg or IntegratorConfig()
    pts = _sample_bundle_points(m, samples, seed)
    residuals = []
    skipped = 0
    for p in pts:
        try:
            states = _geodesic_states(m, p, arc_time, checkpoints, cfg)
            for z in states:
                val, jac, hess = phi.value_jacobian_hessian(z.x)
                if not m.chart.contains(val):
                    raise OutsideChart("image point outside chart")
                xd = z.y
                img_vel = jac @ xd
                G_src = spray_values(m, z.x, xd)
                cdd = np.einsum("cij,i,j->c", hess, xd, xd) - 2.0 * jac @ G_src
                G_img = spray_values(m, val, img_vel)
                res = cdd + 2.0 * G_img
                scale = max(1.0, float(img_vel @ img_vel))
                residuals.append(float(np.linalg.norm(res)) / scale)
        except (ChartExit, OutsideChart, MetricDegenerate, StepLimitExceeded):
            skipped += 1
            continue
    if not residuals:
        raise ValueError("no usable affinity samples (all arcs left the chart)")
    return {
        "max": float(np.max(residuals)),
        "mean": float(np.mean(residuals)),
        "count": len(pts) - skipped,
        "skipped": skipped,
    }


def classify_transformation(m: FinslerMetric, phi: ManifoldMap, samples=48,
                            seed=0, cfg=None) -> TransformationVerdict:
    """Affinity / homothety / isometry verdict for a user-supplied map.

    The homothety factor is the median of c(x, y) = F(phi x, Dphi y)/F(x, y);
    constancy is judged by the relative dispersion max|c_i - med|/med.
    """
    aff = check_affinity(m, phi, samples=samples, seed=seed, cfg=cfg)
    pts = _sample_bundle_points(m, samples, seed + 1)
    cs = []
    skipped = 0
    for p in pts:
        val = phi.value(p.x)
        if not m.chart.contains(val):
            skipped += 1
            continue
        jac = phi.jacobian(p.x)
        img_y = jac @ p.y
        if np.linalg.norm(img_y) <= 1e-12:
            skipped += 1
            continue
        cs.append(float(_f_value(m, val, img_y)) / float(_f_value(m, p.x, p.y)))
    if not cs:
        raise ValueError("no usable classification samples")
    cs = np.asarray(cs)
    med = float(np.median(cs))
    dispersion = float(np.max(np.abs(cs - med)) / med) if med > 0 else np.inf
    is_aff = aff["max"] < _AFFINITY_TOL
    is_hom = dispersion < _HOMOTHETY_TOL
    is_iso = is_hom and abs(med - 1.0) < _ISOMETRY_TOL
    return TransformationVerdict(
        name=phi.name,
        affinity_residual_max=aff["max"],
        affinity_residual_mean=aff["mean"],
        is_affinity=is_aff,
        homothety_factor=med,
        homothety_dispersion=dispersion,
        is_homothety=is_hom,
        is_isometry=is_iso,
        samples_used=len(cs),
        samples_skipped=skipped + aff["skipped"],
    )


@dataclass
class RigidityReport:
    """Aggregated rigidity evidence plus transformation classifications."""

    metric_name: str
    metric_params: dict
    n: int
    criterion_transitivity: dict
    criterion_rank: dict
    criterion_integral_manifolds: dict
    transformations: list
    overall: str
    notes: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "metric": {"name": self.metric_name, "params": self.metric_params, "n": self.n},
            "criterion_transitivity": self.criterion_transitivity,
            "criterion_rank": self.criterion_rank,
            "criterion_integral_manifolds": self.criterion_integral_manifolds,
            "transformations": [t.to_dict() if isinstance(t, TransformationVerdict) else t
                                for t in self.transformations],
            "overall": self.overall,
            "notes": self.notes,
            "settings": self.settings,
        }


_RANK_PASS_FRACTION = 0.95


def assemble_report(m: FinslerMetric, certificates=None, skipped=None,
                    orbit_verdict=None, orbit_stats=None, classifications=None,
                    settings=None, completeness_asserted=False) -> RigidityReport:
    """Combine rank certificates, orbit verdicts and classifications.

    The overall statement claims rigidity evidence only when the transitivity
    or the maximal-rank criterion passes, and never claims non-rigidity.
    """
    if certificates is None and orbit_verdict is None and not classifications:
        raise ValueError("nothing to report: no criterion was evaluated")
    notes = []

    crit1 = {"evaluated": orbit_verdict is not None}
    if orbit_verdict is not None:
        crit1["verdict"] = orbit_verdict
        crit1["stats"] = orbit_stats or {}
        crit1["passes"] = orbit_verdict == TRANSITIVE_EVIDENCE

    crit2 = {"evaluated": certificates is not None}
    if certificates is not None:
        total = len(certificates)
        n_max = sum(1 for c in certificates if c.verdict == CERTIFIED_MAX)
        frac = n_max / total if total else 0.0
        worst = min(certificates, key=lambda c: c.r_lo) if total else None
        crit2.update({
            "points": total,
            "points_skipped": len(skipped or []),
            "fraction_certified_max": frac,
            "pass_fraction_required": _RANK_PASS_FRACTION,
            "worst_point": (worst.to_dict() if worst is not None else None),
            "passes": total > 0 and frac >= _RANK_PASS_FRACTION,
        })
        notes.append("rank sampling is finite evidence on a sampled set, not a density proof")

    crit3 = {
        "evaluated": False,
        "note": ("countably many maximal integral manifolds on the unit level set: "
                 "countability is not machine-decidable; not numerically evaluated"),
    }

    passing = []
    if crit1.get("passes"):
        passing.append("(1) holonomy orbit transitivity")
    if crit2.get("passes"):
        passing.append("(2) maximal stable-hull rank")
    if passing:
        overall = "rigidity evidence: criteria " + " and ".join(passing) + " pass"
        if completeness_asserted:
            overall += "; with forward completeness (user-asserted), affinities are isometries"
        else:
            overall += "; affine transformations are homotheties"
    else:
        overall = "no rigidity evidence; non-rigidity not asserted"

    classifications = list(classifications or [])
    for t in classifications:
        if t.is_homothety and not t.is_isometry and t.is_affinity:
            notes.append(
                f"map {t.name!r} is a proper homothety (c={t.homothety_factor:.6g}): "
                "the metric admits a non-isometric affinity")

    if completeness_asserted:
        notes.append("forward completeness was asserted by the user, not verified")

    return RigidityReport(
        metric_name=m.name, metric_params=m.params, n=m.n,
        criterion_transitivity=crit1, criterion_rank=crit2,
        criterion_integral_manifolds=crit3,
        transformations=classifications, overall=overall,
        notes=notes, settings=dict(settings or {}))
