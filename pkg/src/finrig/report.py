"""Run configuration, analysis orchestration, and report/CSV serialization.

Reports are deterministic given (config, seed): identical runs produce
byte-identical JSON except for the ``wall_time`` field.  Numbers serialize
at full double precision (repr round-trip).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from . import __version__
from .errors import ConfigError, MetricDegenerate
from .dynamics import IntegratorConfig
from .holonomy import LoopFamily, holonomy_orbit, orbit_dimension, transitivity_verdict
from .rank import GeneratorBudget, SamplePlan, rank_map
from .rigidity import assemble_report, classify_transformation
from .zoo import CATALOG, make_metric

SCHEMA_VERSION = 1

ANALYSES = ("rank-map", "holonomy", "classify", "full")


@dataclass
class RunConfig:
    """Everything an analysis run depends on; schema-validated up front."""

    metric: str = "euclidean"
    metric_params: dict = field(default_factory=dict)
    analysis: str = "full"
    # sampling
    grid: int | tuple = 5
    random_points: int = 64
    margin: float = 0.1
    # generator budget
    bracket_depth: int = 3
    flow_words: int = 32
    word_length: int = 3
    time_range: float = 0.5
    tau: float = 1e-7
    # holonomy
    orbit_count: int = 512
    loop_family: str = "coordinate-rectangles"
    loop_edge: float = 0.2
    max_word: int = 6
    orbit_deepen: int = 48
    base_point: tuple | None = None
    # integrator
    rtol: float = 1e-9
    atol: float = 1e-11
    # misc
    seed: int = 0
    parallel: int = 1
    completeness_asserted: bool = False

    def validate(self):
        if self.metric not in CATALOG:
            raise ConfigError(f"unknown metric {self.metric!r}; see `finrig zoo list`")
        if self.analysis not in ANALYSES:
            raise ConfigError(f"analysis must be one of {ANALYSES}")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must be in (0, 1)")
        if self.rtol <= 0 or self.atol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.parallel < 1:
            raise ConfigError("parallel degree must be >= 1")
        if self.orbit_count < 1:
            raise ConfigError("orbit count must be >= 1")
        return self

    def budget(self):
        return GeneratorBudget(bracket_depth=self.bracket_depth,
                               word_count=self.flow_words,
                               word_length=self.word_length,
                               time_range=self.time_range, seed=self.seed)

    def plan(self):
        return SamplePlan(grid=self.grid, random_points=self.random_points,
                          margin=self.margin, seed=self.seed)

    def integrator(self):
        return IntegratorConfig(rtol=self.rtol, atol=self.atol)

    def to_dict(self):
        d = asdict(self)
        if isinstance(d.get("grid"), tuple):
            d["grid"] = list(d["grid"])
        if isinstance(d.get("base_point"), tuple):
            d["base_point"] = list(d["base_point"])
        return d


def _default_base_point(m, seed):
    lo, hi = m.chart.interior_box(0.25)
    rng = np.random.default_rng([seed, 99])
    for _ in range(64):
        x = lo + rng.uniform(size=m.n) * (hi - lo)
        if m.chart.contains(x):
            return x
    raise MetricDegenerate("no admissible base point found in the chart")


def run_analysis(config: RunConfig) -> dict:
    """Execute the configured analyses and return the report document."""
    config.validate()
    t0 = time.perf_counter()
    m = make_metric(config.metric, **config.metric_params)
    cfg = config.integrator()

    certificates = skipped = None
    orbit_block = None
    orbit_verdict = orbit_stats = None
    transforms = []

    if config.analysis in ("rank-map", "full"):
        certs, skip = rank_map(m, config.plan(), config.budget(), tau=config.tau,
                               cfg=cfg, parallel=config.parallel)
        if not certs:
            raise MetricDegenerate("metric degenerate at every sampled point")
        certificates, skipped = certs, skip

    if config.analysis in ("holonomy", "full"):
        p = (np.asarray(config.base_point, dtype=float) if config.base_point is not None
             else _default_base_point(m, config.seed))
        y0 = np.zeros(m.n)
        y0[0] = 1.0
        family = LoopFamily(kind=config.loop_family, edge=config.loop_edge,
                            seed=config.seed)
        sample = holonomy_orbit(m, p, y0, family, config.orbit_count,
                                max_word=config.max_word, deepen=config.orbit_deepen)
        dim = orbit_dimension(sample)
        orbit_verdict, orbit_stats = transitivity_verdict(sample, dim)
        orbit_block = {
            "base_point": [float(v) for v in p],
            "dimension": dim,
            "verdict": orbit_verdict,
            "count": int(sample.count),
            "stats": _jsonable(orbit_stats),
            "points": [[float(v) for v in row] for row in sample.points],
            "word_lengths": [int(v) for v in sample.word_lengths],
        }

    verdict_objs = []
    if config.analysis in ("classify", "full"):
        entry = CATALOG[config.metric]
        for phi, expected in entry.known_maps:
            verdict = classify_transformation(m, phi, seed=config.seed, cfg=cfg)
            verdict_objs.append(verdict)
            d = verdict.to_dict()
            d["expected"] = expected
            transforms.append(d)

    rigidity = None
    overall = "no criteria evaluated"
    if certificates is not None or orbit_verdict is not None or transforms:
        rep = assemble_report(
            m, certificates=certificates, skipped=skipped,
            orbit_verdict=orbit_verdict, orbit_stats=_jsonable(orbit_stats or {}),
            classifications=verdict_objs,
            settings={"seed": config.seed, "tau": config.tau,
                      "rtol": config.rtol, "atol": config.atol,
                      "budget": asdict(config.budget()),
                      "plan": {"grid": config.grid if not isinstance(config.grid, tuple)
                               else list(config.grid),
                               "random_points": config.random_points,
                               "margin": config.margin}},
            completeness_asserted=config.completeness_asserted)
        rigidity = rep.to_dict()
        rigidity["transformations"] = transforms
        overall = rep.overall

    doc = {
        "tool_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "config": config.to_dict(),
        "certificates": [c.to_dict() for c in certificates] if certificates is not None else None,
        "points_skipped": ([{"x": [float(v) for v in p.x], "y": [float(v) for v in p.y],
                             "reason": reason} for p, reason in (skipped or [])]
                           if certificates is not None else None),
        "orbit": orbit_block,
        "transformations": transforms,
        "rigidity": rigidity,
        "overall": overall,
        "wall_time": time.perf_counter() - t0,
    }
    return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj]
    return obj


def dump_report(doc: dict, path=None) -> str:
    """Serialize a report; sorted keys and repr floats make runs comparable."""
    text = json.dumps(_jsonable(doc), indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def load_schema():
    with resources.files("finrig.schemas").joinpath("report-v1.json").open() as fh:
        return json.load(fh)


def rank_csv(certificates, path, n):
    """Rank-map CSV: x1,...,xn,y1,...,yn,rank."""
    header = ",".join([f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)]
                      + ["rank"])
    lines = [header]
    for c in certificates:
        vals = [repr(float(v)) for v in c.point.x] + [repr(float(v)) for v in c.point.y]
        lines.append(",".join(vals + [str(c.r_lo)]))
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text


def orbit_csv(orbit_block, path):
    """Orbit point-cloud CSV: y1,...,yn,word_length."""
    pts = orbit_block["points"]
    n = len(pts[0])
    header = ",".join([f"y{i + 1}" for i in range(n)] + ["word_length"])
    lines = [header]
    for row, wl in zip(pts, orbit_block["word_lengths"]):
        lines.append(",".join([repr(float(v)) for v in row] + [str(wl)]))
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text


def r2_csv(xs, ys, grid, path=None):
    """Planar-example CSV: x,y,rank."""
    lines = ["x,y,rank"]
    for i, xv in enumerate(xs):
        for j, yv in enumerate(ys):
            lines.append(f"{float(xv)!r},{float(yv)!r},{int(grid[i, j])}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text
