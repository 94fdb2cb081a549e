"""Command-line interface.

Commands: analyze, rank-map, holonomy, transport, classify, r2-example, zoo.
Exit codes: 0 success, 2 configuration error, 3 metric degenerate at every
sampled point, 4 internal consistency failure.  FINRIG_SEED sets the default
seed; explicit --seed wins.  A JSON config file may supply any RunConfig
field; command-line flags override it.
"""

from __future__ import annotations

import argparse
import ast
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .errors import ConfigError, ConsistencyError, FinrigError, MetricDegenerate
from .dynamics import IntegratorConfig, circle_loop, parallel_transport, polygon_loop, rectangle_loop
from .exprs import compile_expression
from .report import RunConfig, dump_report, orbit_csv, r2_csv, rank_csv, run_analysis
from .rigidity import ManifoldMap, classify_transformation, linear_map, rotation_map
from .zoo import make_metric, r2_orbit_trace, r2_rank_map, zoo_entries
from .geometry import evaluate_metric, SlitTangentPoint

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
EXIT_CONSISTENCY = 4


def _default_seed():
    env = os.environ.get("FINRIG_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"FINRIG_SEED={env!r} is not an integer")


def _parse_grid(text):
    if "x" in text:
        parts = text.split("x")
        try:
            return tuple(int(p) for p in parts)
        except ValueError:
            raise ConfigError(f"bad grid spec {text!r}")
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"bad grid spec {text!r}")


def _parse_params(text):
    if not text:
        return {}
    try:
        params = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--params must be JSON: {exc}")
    if not isinstance(params, dict):
        raise ConfigError("--params must be a JSON object")
    # JSON lists become tuples where builders expect vectors/factor lists
    return {k: tuple(v) if isinstance(v, list) else v for k, v in params.items()}


def _parse_vector(text, what="vector"):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"bad {what} {text!r}; expected comma-separated floats")


def _add_common(sp):
    sp.add_argument("--metric", default="euclidean", help="zoo metric name")
    sp.add_argument("--params", default="", help="metric parameters as JSON")
    sp.add_argument("--seed", type=int, default=None, help="master seed (default: FINRIG_SEED or 0)")
    sp.add_argument("--out", default=None, help="write the JSON report here")
    sp.add_argument("--rtol", type=float, default=1e-9)
    sp.add_argument("--atol", type=float, default=1e-11)


def _add_rank_flags(sp):
    sp.add_argument("--grid", default="5", help="base grid: N or N1xN2x...")
    sp.add_argument("--random-points", type=int, default=64)
    sp.add_argument("--margin", type=float, default=0.1)
    sp.add_argument("--bracket-depth", type=int, default=3)
    sp.add_argument("--flow-words", type=int, default=32)
    sp.add_argument("--word-length", type=int, default=3)
    sp.add_argument("--time-range", type=float, default=0.5)
    sp.add_argument("--tau", type=float, default=1e-7)
    sp.add_argument("--csv", default=None, help="write the rank grid as CSV")


def _add_holonomy_flags(sp):
    sp.add_argument("--count", type=int, default=512, help="orbit points")
    sp.add_argument("--loop-family", default="coordinate-rectangles",
                    choices=("coordinate-rectangles", "geodesic-polygons", "random-piecewise"))
    sp.add_argument("--loop-edge", type=float, default=0.2)
    sp.add_argument("--max-word", type=int, default=6)
    sp.add_argument("--deepen", type=int, default=48)
    sp.add_argument("--base-point", default=None, help="comma-separated chart point")
    sp.add_argument("--orbit-csv", default=None, help="write orbit points as CSV")


def _build_parser():
    ap = argparse.ArgumentParser(prog="finrig", description=__doc__)
    ap.add_argument("--version", action="version", version=f"finrig {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("analyze", help="run the selected analyses and assemble a rigidity report")
    _add_common(sp)
    _add_rank_flags(sp)
    _add_holonomy_flags(sp)
    sp.add_argument("--full", action="store_true", help="rank map + holonomy + classification")
    sp.add_argument("--rank", action="store_true", help="rank map only")
    sp.add_argument("--holonomy", action="store_true", help="holonomy orbit only")
    sp.add_argument("--classify", action="store_true", help="classify the metric's known maps only")
    sp.add_argument("--parallel", type=int, default=1)
    sp.add_argument("--config", default=None, help="JSON config file; flags override")
    sp.add_argument("--complete", action="store_true",
                    help="assert (unverified) forward completeness in the report")

    sp = sub.add_parser("rank-map", help="rank certificates over a sample of the slit bundle")
    _add_common(sp)
    _add_rank_flags(sp)
    sp.add_argument("--parallel", type=int, default=1)

    sp = sub.add_parser("holonomy", help="holonomy orbit and transitivity verdict")
    _add_common(sp)
    _add_holonomy_flags(sp)

    sp = sub.add_parser("transport", help="parallel transport along a described loop")
    _add_common(sp)
    sp.add_argument("--loop", default="circle", choices=("circle", "rectangle", "polygon"))
    sp.add_argument("--center", default="0,0")
    sp.add_argument("--radius", type=float, default=0.3)
    sp.add_argument("--at", default=None, help="start point (default: loop start)")
    sp.add_argument("--sizes", default="0.2,0.2", help="rectangle edge lengths a,b")
    sp.add_argument("--axes", default="0,1", help="rectangle coordinate plane i,j")
    sp.add_argument("--vertices", default=None,
                    help="polygon vertices as JSON, e.g. [[0,0],[0.2,0],[0,0.2]]")
    sp.add_argument("--y0", required=True, help="fiber vector to transport")

    sp = sub.add_parser("classify", help="classify a user-supplied self-map")
    _add_common(sp)
    sp.add_argument("--map", default=None,
                    help="built-in map: scale:C | rotation:ALPHA | shear:A | translate:DX,DY")
    sp.add_argument("--map-expr", default=None,
                    help='component expressions as JSON, e.g. ["2*x1","2*x2"]')
    sp.add_argument("--samples", type=int, default=48)

    sp = sub.add_parser("r2-example", help="planar variable-rank subspace field")
    sp.add_argument("--grid", default="41x41")
    sp.add_argument("--window", default="-2,2,-0.5,1.5",
                    help="xmin,xmax,ymin,ymax (y endpoints chosen to hit 0 and 1)")
    sp.add_argument("--csv", default=None, help="write x,y,rank CSV here")
    sp.add_argument("--trace", default=None, help="orbit trace start point x,y")
    sp.add_argument("--steps", type=int, default=12)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("zoo", help="catalog operations")
    sp.add_argument("zoo_command", choices=["list"])
    return ap


def _make_map(args, n):
    if args.map_expr:
        try:
            exprs = json.loads(args.map_expr)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--map-expr must be JSON: {exc}")
        if not isinstance(exprs, list) or len(exprs) != n:
            raise ConfigError(f"--map-expr needs a list of {n} expressions")
        fns = [compile_expression(str(e), n) for e in exprs]

        def fn(xs):
            return [f(xs) for f in fns]

        return ManifoldMap(fn, n, name="expr-map", params={"exprs": exprs})
    if not args.map:
        raise ConfigError("classify needs --map or --map-expr")
    kind, _, arg = args.map.partition(":")
    if kind == "scale":
        c = float(arg or 2.0)
        return linear_map(c * np.eye(n), name=f"scale({c:g})")
    if kind == "rotation":
        if n != 2:
            raise ConfigError("rotation map is 2-d only")
        return rotation_map(float(arg or math.pi / 5))
    if kind == "shear":
        if n != 2:
            raise ConfigError("shear map is 2-d only")
        a = float(arg or 1.0)
        return linear_map(np.array([[1.0, a], [0.0, 1.0]]), name=f"shear({a:g})")
    if kind == "translate":
        vec = _parse_vector(arg, "translation")
        if vec.shape != (n,):
            raise ConfigError(f"translation needs {n} components")
        return linear_map(np.eye(n), vec, name="translate")
    raise ConfigError(f"unknown map {args.map!r}")


def _config_from_args(args):
    base = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                base = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        if not isinstance(base, dict):
            raise ConfigError("config file must hold a JSON object")

    analysis = "full"
    flags = [name for name in ("full", "rank", "holonomy", "classify")
             if getattr(args, name, False)]
    if len(flags) > 1:
        raise ConfigError(f"choose one of --full/--rank/--holonomy/--classify, got {flags}")
    if flags:
        analysis = {"full": "full", "rank": "rank-map",
                    "holonomy": "holonomy", "classify": "classify"}[flags[0]]
    elif "analysis" in base:
        analysis = base["analysis"]

    def pick(key, default, flag=None):
        value = getattr(args, flag or key, None)
        if value is not None and value != default:
            return value
        if key in base:
            return base[key]
        return default

    seed = args.seed if args.seed is not None else base.get("seed", _default_seed())
    raw_base_point = getattr(args, "base_point", None)
    cfgdict = dict(
        metric=pick("metric", "euclidean"),
        metric_params=_parse_params(args.params) or base.get("metric_params", {}),
        analysis=analysis,
        grid=_parse_grid(str(pick("grid", "5"))),
        random_points=pick("random_points", 64),
        margin=pick("margin", 0.1),
        bracket_depth=pick("bracket_depth", 3),
        flow_words=pick("flow_words", 32),
        word_length=pick("word_length", 3),
        time_range=pick("time_range", 0.5),
        tau=pick("tau", 1e-7),
        orbit_count=pick("orbit_count", 512, flag="count"),
        loop_family=pick("loop_family", "coordinate-rectangles"),
        loop_edge=pick("loop_edge", 0.2),
        max_word=pick("max_word", 6),
        orbit_deepen=pick("orbit_deepen", 48, flag="deepen"),
        base_point=(tuple(_parse_vector(raw_base_point, "base point"))
                    if raw_base_point else
                    (tuple(base["base_point"]) if "base_point" in base else None)),
        rtol=pick("rtol", 1e-9),
        atol=pick("atol", 1e-11),
        seed=seed,
        parallel=pick("parallel", 1),
        completeness_asserted=getattr(args, "complete", False) or base.get("completeness_asserted", False),
    )
    return RunConfig(**cfgdict)


def _cmd_analyze(args):
    config = _config_from_args(args)
    doc = run_analysis(config)
    text = dump_report(doc, args.out)
    if args.csv and doc.get("certificates"):
        _certs_to_csv(doc, args.csv)
    if args.orbit_csv and doc.get("orbit"):
        orbit_csv(doc["orbit"], args.orbit_csv)
    if not args.out:
        print(text)
    else:
        print(f"report written to {args.out}; overall: {doc['overall']}")
    return EXIT_OK


def _certs_to_csv(doc, path):
    certs = doc["certificates"]
    n = len(certs[0]["x"])
    header = ",".join([f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)] + ["rank"])
    lines = [header]
    for c in certs:
        lines.append(",".join([repr(v) for v in c["x"]] + [repr(v) for v in c["y"]]
                              + [str(c["r_lo"])]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _cmd_rank_map(args):
    args.config = None
    config = _config_from_args(args)
    config.analysis = "rank-map"
    doc = run_analysis(config)
    dump_report(doc, args.out)
    if args.csv:
        _certs_to_csv(doc, args.csv)
    certs = doc["certificates"]
    verdicts = {}
    for c in certs:
        verdicts[c["verdict"]] = verdicts.get(c["verdict"], 0) + 1
    print(f"{len(certs)} certificates: {verdicts}")
    if not args.out and not args.csv:
        print(dump_report(doc))
    return EXIT_OK


def _cmd_holonomy(args):
    args.config = None
    config = _config_from_args(args)
    config.analysis = "holonomy"
    doc = run_analysis(config)
    dump_report(doc, args.out)
    if args.orbit_csv and doc.get("orbit"):
        orbit_csv(doc["orbit"], args.orbit_csv)
    orbit = doc["orbit"]
    print(f"orbit of {orbit['count']} points: dimension {orbit['dimension']}, "
          f"verdict {orbit['verdict']}")
    if not args.out:
        print(dump_report(doc))
    return EXIT_OK


def _cmd_transport(args):
    m = make_metric(args.metric, **_parse_params(args.params))
    cfg = IntegratorConfig(rtol=args.rtol, atol=args.atol)
    y0 = _parse_vector(args.y0, "fiber vector")
    if args.loop == "circle":
        if m.n != 2:
            raise ConfigError("circle loops are 2-d")
        loop = circle_loop(_parse_vector(args.center, "center"), args.radius)
    elif args.loop == "rectangle":
        at = _parse_vector(args.at or args.center, "start point")
        a, b = (float(v) for v in args.sizes.split(","))
        i, j = (int(v) for v in args.axes.split(","))
        loop = rectangle_loop(at, i, j, a, b)
    else:
        if not args.vertices:
            raise ConfigError("polygon loop needs --vertices")
        verts = json.loads(args.vertices)
        loop = polygon_loop([np.asarray(v, dtype=float) for v in verts])
    y1 = parallel_transport(m, loop, y0, cfg)
    start = loop.start()
    f0 = evaluate_metric(m, SlitTangentPoint(start, y0))
    f1 = evaluate_metric(m, SlitTangentPoint(start, y1))
    doc = {
        "metric": args.metric,
        "y0": [float(v) for v in y0],
        "y1": [float(v) for v in y1],
        "f_before": f0,
        "f_after": f1,
        "f_drift": abs(f1 - f0) / f0,
    }
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_classify(args):
    m = make_metric(args.metric, **_parse_params(args.params))
    cfg = IntegratorConfig(rtol=args.rtol, atol=args.atol)
    phi = _make_map(args, m.n)
    seed = args.seed if args.seed is not None else _default_seed()
    verdict = classify_transformation(m, phi, samples=args.samples, seed=seed, cfg=cfg)
    text = json.dumps(verdict.to_dict(), indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _cmd_r2(args):
    counts = _parse_grid(args.grid)
    nx, ny = (counts, counts) if isinstance(counts, int) else counts
    try:
        x0, x1, y0, y1 = (float(v) for v in args.window.split(","))
    except ValueError:
        raise ConfigError(f"bad window {args.window!r}")
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    grid = r2_rank_map(xs, ys)
    text = r2_csv(xs, ys, grid, args.csv)
    doc = {"grid": [nx, ny], "window": [x0, x1, y0, y1],
           "rank_counts": {str(r): int(np.sum(grid == r)) for r in np.unique(grid)}}
    if args.trace:
        start = _parse_vector(args.trace, "trace start")
        tr = r2_orbit_trace(start, args.steps)
        doc["trace"] = [[float(a), float(b)] for a, b in tr]
    out = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(out + "\n")
    if args.csv:
        print(f"rank grid written to {args.csv}")
    else:
        print(text, end="")
    print(out)
    return EXIT_OK


def _cmd_zoo(args):
    for entry in zoo_entries():
        known = []
        if entry.expected_rank is not None:
            known.append(f"rank {entry.expected_rank}")
        if entry.expected_transitivity:
            known.append(entry.expected_transitivity)
        suffix = f"  [{', '.join(known)}]" if known else ""
        print(f"{entry.name:22s} {entry.description}{suffix}")
    return EXIT_OK


def main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
        if args.command == "analyze":
            return _cmd_analyze(args)
        if args.command == "rank-map":
            return _cmd_rank_map(args)
        if args.command == "holonomy":
            return _cmd_holonomy(args)
        if args.command == "transport":
            return _cmd_transport(args)
        if args.command == "classify":
            return _cmd_classify(args)
        if args.command == "r2-example":
            return _cmd_r2(args)
        if args.command == "zoo":
            return _cmd_zoo(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConsistencyError as exc:
        print(f"internal consistency failure: {exc}", file=sys.stderr)
        return EXIT_CONSISTENCY
    except MetricDegenerate as exc:
        print(f"metric degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except FinrigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
