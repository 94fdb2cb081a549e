"""Generator sets for the stable hull of the horizontal fields, and certified
pointwise dimension of the subspace field they span.

Soundness rests on two facts recorded per certificate: every generated vector
must annihilate dF (relative residual below 1e-6), and the spanned dimension
can never exceed 2n-1; a run that produces 2n independent vectors with passing
residuals aborts with :class:`ConsistencyError`.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product as iter_product

import numpy as np

from .errors import ChartExit, ConsistencyError, MetricDegenerate, StepLimitExceeded
from .geometry import (
    BundleTangentVector,
    SlitTangentPoint,
    check_point,
    connection_and_grad_batch,
    connection_batch,
    connection_jets,
    dF,
    df_residual,
    spray_coefficients,
    _f_value,
)
from .dynamics import (
    IntegratorConfig,
    flow_pushforward,
    horizontal_lift_field,
    integrate_flow,
    integrate_ode,
)
from .jets import Jet, get_space

CERTIFIED_MAX = "CERTIFIED_MAX"
BELOW_MAX = "BELOW_MAX"
INCONCLUSIVE = "INCONCLUSIVE"

_DF_RESIDUAL_MAX = 1e-6
_ZERO_ROW_REL = 1e-10


@dataclass
class GeneratorBudget:
    """How many stable-hull generators to produce at each point.

    ``times`` fixes the per-position flow times; when None they are drawn
    uniformly from [-time_range, time_range] per word.
    """

    bracket_depth: int = 3
    word_count: int = 32
    word_length: int = 3
    time_range: float = 0.5
    times: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.bracket_depth < 0 or self.word_count < 0 or self.word_length < 0:
            raise ValueError("budget counts must be nonnegative")


@dataclass
class SamplePlan:
    """Base-grid plus seeded random sampling of the slit bundle."""

    grid: int | tuple = 5
    random_points: int = 64
    margin: float = 0.1
    seed: int = 0


@dataclass
class RankCertificate:
    point: SlitTangentPoint
    n: int
    vector_count: int
    singular_values: np.ndarray
    r_lo: int
    r_hi: int
    df_residual_max: float
    verdict: str
    vertical_rank: int
    bracket_rank: int
    dropped_words: int = 0
    anomalies: list = field(default_factory=list)

    def to_dict(self):
        return {
            "x": [float(v) for v in self.point.x],
            "y": [float(v) for v in self.point.y],
            "vector_count": self.vector_count,
            "singular_values": [float(s) for s in self.singular_values],
            "r_lo": self.r_lo,
            "r_hi": self.r_hi,
            "df_residual_max": float(self.df_residual_max),
            "verdict": self.verdict,
            "vertical_rank": self.vertical_rank,
            "bracket_rank": self.bracket_rank,
            "dropped_words": self.dropped_words,
            "anomalies": list(self.anomalies),
        }


# ---------------------------------------------------------------------------
# bracket generators (formal jet brackets of the coordinate horizontal lifts)


def _lift_vecjets(m, p, deg):
    n = m.n
    N = connection_jets(m, p.x, p.y, deg)
    sp = N[0][0].space
    lifts = []
    for i in range(n):
        comps = [Jet.constant(sp, 1.0 if k == i else 0.0) for k in range(n)]
        fiber = [N[j][i] * (-1.0) for j in range(n)]
        lifts.append(comps + fiber)
    return lifts


def _vec_bracket(A, B):
    """[A, B] of jet-expanded fields; the result loses one Taylor degree."""
    dim = len(A)
    dout = min(A[0].space.order, B[0].space.order) - 1
    if dout < 0:
        raise ValueError("bracket needs fields expanded to degree >= 1")
    At = [a.truncate(dout) for a in A]
    Bt = [b.truncate(dout) for b in B]
    out = []
    for i in range(dim):
        acc = Jet.constant(At[0].space, 0.0)
        dBi = B[i]
        dAi = A[i]
        for j in range(dim):
            if np.any(At[j].c):
                acc = acc + dBi.derivative(j).truncate(dout) * At[j]
            if np.any(Bt[j].c):
                acc = acc - dAi.derivative(j).truncate(dout) * Bt[j]
        out.append(acc)
    return out


def _vecjet_value(p, jets):
    arr = np.array([float(np.asarray(j.value)) for j in jets])
    n = p.n
    return BundleTangentVector(p, arr[:n], arr[n:])


def bracket_generators(m, p: SlitTangentPoint, depth: int):
    """The n horizontal lifts plus all left-normed iterated brackets up to ``depth``."""
    check_point(m, p)
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    n = m.n
    if depth == 0:
        N = spray_coefficients(m, p).N
        eye = np.eye(n)
        return [BundleTangentVector(p, eye[i], -N[:, i]) for i in range(n)]
    lifts = _lift_vecjets(m, p, depth)
    vectors = [_vecjet_value(p, lf) for lf in lifts]
    level = []
    for i in range(n):
        for j in range(i + 1, n):
            w = _vec_bracket(lifts[i], lifts[j])
            level.append(w)
            vectors.append(_vecjet_value(p, w))
    for _ in range(2, depth + 1):
        nxt = []
        for w in level:
            for lf in lifts:
                wb = _vec_bracket(w, lf)
                nxt.append(wb)
                vectors.append(_vecjet_value(p, wb))
        level = nxt
    return vectors


# ---------------------------------------------------------------------------
# flow-word generators


def _sample_words(budget: GeneratorBudget, n, rng):
    words = []
    for _ in range(budget.word_count):
        k = int(rng.integers(1, budget.word_length + 1)) if budget.word_length >= 1 else 0
        fields = rng.integers(0, n, size=k)
        if budget.times is not None:
            times = np.asarray(budget.times, dtype=float)[:k]
        else:
            times = rng.uniform(-budget.time_range, budget.time_range, size=k)
        y_index = int(rng.integers(0, n))
        words.append((fields.astype(int), times, y_index))
    return words


def _batch_inside(m, n):
    chart = m.chart

    def inside(flat):
        Z = flat.reshape(-1, 2 * n)
        for row in Z:
            if not chart.contains(row[:n]) or np.linalg.norm(row[n:]) <= 1e-12:
                return False
        return True

    return inside


def _integrate_lift_legs(m, Z, fidx, times, cfg, J=None):
    """Batched flow (and optional variational) legs along coordinate lifts.

    Each batch element b flows along the lift of coordinate field fidx[b] for
    time times[b]; integration is time-rescaled to s in [0, 1] so one adaptive
    run serves the whole batch.
    """
    B, dim = Z.shape
    n = dim // 2
    rows = np.arange(B)
    inside_z = _batch_inside(m, n)

    if J is None:
        def rhs(_s, flat):
            Zb = flat.reshape(B, dim)
            N = connection_batch(m, Zb[:, :n], Zb[:, n:])
            V = np.zeros((B, dim))
            V[rows, fidx] = 1.0
            V[:, n:] = -N[rows, :, fidx]
            return (V * times[:, None]).ravel()

        out = integrate_ode(rhs, Z.ravel(), 0.0, 1.0, cfg, inside=inside_z)
        return out.reshape(B, dim), None

    def rhs(_s, flat):
        Zb = flat[: B * dim].reshape(B, dim)
        Jb = flat[B * dim:].reshape(B, dim)
        N, dN = connection_and_grad_batch(m, Zb[:, :n], Zb[:, n:])
        V = np.zeros((B, dim))
        V[rows, fidx] = 1.0
        V[:, n:] = -N[rows, :, fidx]
        jac = np.zeros((B, dim, dim))
        jac[:, n:, :] = -dN[rows, :, fidx, :]
        dJ = np.einsum("bij,bj->bi", jac, Jb)
        return np.concatenate([(V * times[:, None]).ravel(), (dJ * times[:, None]).ravel()])

    state = np.concatenate([Z.ravel(), J.ravel()])
    out = integrate_ode(rhs, state, 0.0, 1.0, cfg,
                        inside=lambda s: inside_z(s[: B * dim]))
    return out[: B * dim].reshape(B, dim), out[B * dim:].reshape(B, dim)


def _word_vector_scalar(m, p, word, cfg):
    """Single-word evaluation (fallback path when a batch leaves the chart)."""
    fields, times, y_index = word
    z = p
    for fi, ti in zip(fields, times):
        z = integrate_flow(horizontal_lift_field(m, int(fi)), z, -float(ti), cfg)
    N = spray_coefficients(m, z).N
    ey = np.zeros(m.n)
    ey[y_index] = 1.0
    v = BundleTangentVector(z, ey, -N[:, y_index])
    for fi, ti in zip(reversed(fields), reversed(times)):
        v = flow_pushforward(horizontal_lift_field(m, int(fi)), float(ti), v, cfg)
    return BundleTangentVector(p, v.a, v.b)


def flow_generators(m, p: SlitTangentPoint, budget: GeneratorBudget,
                    cfg=None, rng=None):
    """Evaluate random stable-hull flow words at p.

    Returns (vectors, dropped) where ``dropped`` counts words whose flows left
    the chart.  Deterministic given the budget seed (or the supplied rng).
    """
    check_point(m, p)
    n = m.n
    if budget.word_count == 0:
        return [], 0
    if rng is None:
        rng = np.random.default_rng(budget.seed)
    words = _sample_words(budget, n, rng)
    if budget.word_length == 0:
        N = spray_coefficients(m, p).N
        eye = np.eye(n)
        return [BundleTangentVector(p, eye[w[2]], -N[:, w[2]]) for w in words], 0

    cfg = cfg or IntegratorConfig()
    W = len(words)
    dim = 2 * n
    try:
        Z = np.tile(p.as_array(), (W, 1))
        maxk = max(len(w[0]) for w in words)
        for pos in range(maxk):
            sel = np.array([i for i in range(W) if len(words[i][0]) > pos])
            fidx = np.array([words[i][0][pos] for i in sel])
            ts = np.array([-words[i][1][pos] for i in sel])
            Z[sel], _ = _integrate_lift_legs(m, Z[sel], fidx, ts, cfg)
        N = connection_batch(m, Z[:, :n], Z[:, n:])
        J = np.zeros((W, dim))
        for i, (_, _, yi) in enumerate(words):
            J[i, yi] = 1.0
            J[i, n:] = -N[i][:, yi]
        for pos in range(maxk - 1, -1, -1):
            sel = np.array([i for i in range(W) if len(words[i][0]) > pos])
            fidx = np.array([words[i][0][pos] for i in sel])
            ts = np.array([words[i][1][pos] for i in sel])
            Z[sel], J[sel] = _integrate_lift_legs(m, Z[sel], fidx, ts, cfg, J=J[sel])
        return [BundleTangentVector(p, J[i, :n], J[i, n:]) for i in range(W)], 0
    except (ChartExit, MetricDegenerate, StepLimitExceeded):
        vectors, dropped = [], 0
        for word in words:
            try:
                vectors.append(_word_vector_scalar(m, p, word, cfg))
            except (ChartExit, MetricDegenerate, StepLimitExceeded):
                dropped += 1
        return vectors, dropped


# ---------------------------------------------------------------------------
# numerical rank and certificates


def _row_normalize(M):
    """Unit rows without underflow: rows are prescaled by their max entry.

    Returns (R, kept_mask); rows that are exactly zero are excluded (they
    span nothing).  Squaring e.g. 1e-200 would underflow a plain norm.
    """
    amax = np.max(np.abs(M), axis=1)
    keep = amax > 0.0
    scaled = M[keep] / amax[keep, None]
    norms = np.linalg.norm(scaled, axis=1)
    return scaled / norms[:, None], keep


def numerical_rank(vectors, tau):
    """(rank, singular values) of the row-normalized stack of vectors.

    Only rows of exactly zero norm are dropped (they span nothing); any
    nonzero row, however small, normalizes to a unit row.  Callers whose
    vectors carry integrator noise must pre-filter (see
    :func:`stable_hull_dimension`).
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must be in (0, 1)")
    rows = [v.as_array() if isinstance(v, BundleTangentVector) else np.asarray(v, dtype=float)
            for v in vectors]
    if len(rows) == 0:
        raise ValueError("numerical_rank of an empty generator list")
    M = np.stack(rows)
    R, keep = _row_normalize(M)
    if R.shape[0] == 0:
        return 0, np.zeros(0)
    s = np.linalg.svd(R, compute_uv=False)
    rank = int(np.sum(s > tau * s[0])) if s.size and s[0] > 0 else 0
    return rank, s


def _filter_noise(arrays):
    """Drop generator rows at the integrator noise floor relative to the lifts."""
    norms = [float(np.linalg.norm(a)) for a in arrays]
    top = max(norms) if norms else 0.0
    if top == 0.0:
        return arrays
    return [a for a, nn in zip(arrays, norms) if nn > _ZERO_ROW_REL * top]


def vertical_projection_rank(m, vectors, tau=1e-7):
    """Rank of the vertical projections v(a; b) = (0; b + N a) of the generators."""
    if len(vectors) == 0:
        raise ValueError("no vectors")
    p = vectors[0].base
    N = spray_coefficients(m, p).N
    rows = _filter_noise([v.b + N @ v.a for v in vectors])
    if not rows:
        return 0
    r, _ = numerical_rank(rows, tau)
    return r


def check_rank_bound(r_lo, n, residuals_ok):
    """Abort when the certified span contradicts the analytic upper bound 2n-1."""
    if residuals_ok and r_lo >= 2 * n:
        raise ConsistencyError(
            f"{r_lo} independent generators with passing dF residuals; "
            f"the span must lie in ker dF (dimension <= {2 * n - 1})")


def stable_hull_dimension(m, p: SlitTangentPoint, budget: GeneratorBudget,
                          tau=1e-7, cfg=None, rng=None) -> RankCertificate:
    """Combine bracket and flow generators into a rank certificate at p."""
    check_point(m, p)
    n = m.n
    dfp = dF(m, p)

    brack = bracket_generators(m, p, budget.bracket_depth)
    bracket_rank, _ = numerical_rank(_filter_noise([g.as_array() for g in brack]), tau)
    flow, dropped = flow_generators(m, p, budget, cfg=cfg, rng=rng)
    gens = brack + flow

    arrays = [g.as_array() for g in gens]
    residuals = [df_residual(dfp, a) for a in arrays]
    res_max = float(max(residuals)) if residuals else 0.0
    res_ok = res_max < _DF_RESIDUAL_MAX

    r, s = numerical_rank(_filter_noise(arrays), tau)
    check_rank_bound(r, n, res_ok)

    anomalies = []
    if r > bracket_rank + 2:
        anomalies.append(
            f"flow words exceed bracket-closure rank ({r} > {bracket_rank} + 2)")

    if r == 2 * n - 1 and res_ok:
        verdict = CERTIFIED_MAX
    elif r < 2 * n - 1:
        gap_ok = True
        if s.size > r and s.size and s[0] > 0:
            gap_ok = s[r] / s[0] < tau / 100.0
        verdict = BELOW_MAX if gap_ok else INCONCLUSIVE
    else:
        verdict = INCONCLUSIVE

    vrank = vertical_projection_rank(m, gens, tau)
    return RankCertificate(
        point=p, n=n, vector_count=len(gens), singular_values=s,
        r_lo=r, r_hi=2 * n - 1, df_residual_max=res_max, verdict=verdict,
        vertical_rank=vrank, bracket_rank=bracket_rank,
        dropped_words=dropped, anomalies=anomalies)


# ---------------------------------------------------------------------------
# sampling plans and rank maps


def sample_points(m, plan: SamplePlan):
    """Deterministic sample of the slit bundle: base grid + random pairs.

    Fiber vectors are normalized to F = 1.  Excluded or degenerate nodes are
    skipped; the sampling is evidence over a finite set, not a density proof.
    """
    n = m.n
    lo, hi = m.chart.interior_box(plan.margin)
    counts = plan.grid if isinstance(plan.grid, (tuple, list)) else (plan.grid,) * n
    if len(counts) != n:
        raise ValueError(f"grid spec {counts} does not match dimension {n}")
    axes = [np.linspace(lo[i], hi[i], counts[i]) for i in range(n)]
    pts = []
    for j, combo in enumerate(iter_product(*axes)):
        x = np.array(combo)
        if not m.chart.contains(x):
            continue
        rng = np.random.default_rng([plan.seed, 0, j])
        y = rng.standard_normal(n)
        y /= np.linalg.norm(y)
        try:
            y = y / float(_f_value(m, x, y))
        except (ValueError, ZeroDivisionError):
            continue
        pts.append(SlitTangentPoint(x, y))
    for j in range(plan.random_points):
        rng = np.random.default_rng([plan.seed, 1, j])
        x = None
        for _ in range(64):
            cand = lo + rng.uniform(size=n) * (hi - lo)
            if m.chart.contains(cand):
                x = cand
                break
        if x is None:
            continue
        y = rng.standard_normal(n)
        y /= np.linalg.norm(y)
        try:
            y = y / float(_f_value(m, x, y))
        except (ValueError, ZeroDivisionError):
            continue
        pts.append(SlitTangentPoint(x, y))
    return pts


def rank_map(m, plan: SamplePlan, budget: GeneratorBudget, tau=1e-7,
             cfg=None, parallel=1):
    """One certificate per non-degenerate sample point; deterministic given seeds.

    Per-point RNG streams derive from (budget.seed, point index), so results
    are identical at any parallelism degree.  Returns (certificates, skipped)
    where skipped is a list of (point, reason) pairs.
    """
    points = sample_points(m, plan)

    def work(args):
        idx, p = args
        rng = np.random.default_rng([budget.seed, idx])
        try:
            return stable_hull_dimension(m, p, budget, tau=tau, cfg=cfg, rng=rng)
        except MetricDegenerate as exc:
            return (p, f"degenerate: {exc}")
        except (ChartExit, StepLimitExceeded) as exc:
            return (p, f"integration: {exc}")

    jobs = list(enumerate(points))
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    certs = [r for r in results if isinstance(r, RankCertificate)]
    skipped = [r for r in results if not isinstance(r, RankCertificate)]
    return certs, skipped
