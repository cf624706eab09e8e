"""Command-line front end.

    hustab verify CONFIG [-o report.json] [--set key=value ...] [--timings]
    hustab correct CONFIG [-o z.csv] [--format csv|json] [--set key=value ...]
    hustab flow CONFIG --point X [X ...] --t-end T [--t-start T0] [--samples K] [--numerical]
    hustab demo
    hustab catalog [--format json]

Exit status: 0 all verdicts pass, 1 a verification verdict failed,
2 usage or configuration error, 3 numerical failure.
"""
import argparse
import json
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path

import numpy as np

from . import harness
from .configfile import apply_overrides, config_from_dict, load_config, tomllib
from .core import hus_bound
from .errors import HusError, NumericalError, ParseError, StageError, ValidationError
from .geometry import CATALOG, FlowMap
from .numerics import Tolerances

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3
DEMO_CONFIGS = ("tightness.toml", "periodic.toml", "euler.toml")


def write_atomic(path, text):
    """Write ``text`` to ``path`` via a temporary file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(text, output):
    if output:
        write_atomic(output, text)
    else:
        sys.stdout.write(text)


def to_json(data):
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def _fmt(v):
    return repr(float(v)) if not np.isfinite(v) else f"{float(v):.17g}"


def samples_csv(points, values):
    """CSV with header ``x1..xn,re_1,im_1,...`` and 17 significant digits."""
    points = np.atleast_2d(points)
    values = np.asarray(values)
    values = values.reshape(len(points), -1)
    n, m = points.shape[1], values.shape[1]
    header = [f"x{i + 1}" for i in range(n)]
    for j in range(m):
        header += [f"re_{j + 1}", f"im_{j + 1}"]
    lines = [",".join(header)]
    for x, v in zip(points, values):
        cells = [_fmt(c) for c in x]
        for c in v:
            c = complex(c)
            cells += [_fmt(c.real), _fmt(c.imag)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def trajectory_csv(times, states):
    states = np.atleast_2d(states)
    header = ["t"] + [f"x{i + 1}" for i in range(states.shape[1])]
    rows = [",".join([_fmt(t)] + [_fmt(c) for c in x]) for t, x in zip(times, states)]
    return "\n".join([",".join(header)] + rows) + "\n"


def load_packaged_config(name):
    text = resources.files("hustab").joinpath("configs", name).read_text(encoding="utf-8")
    return config_from_dict(tomllib.loads(text), text)


# -- subcommands ---------------------------------------------------------------

def cmd_verify(args):
    config = load_config(args.config, args.overrides)
    report = harness.run_experiment(config)
    emit(to_json(report.as_dict(include_timings=args.timings)), args.output)
    for name, ok in report.verdicts().items():
        if not ok:
            print(f"verdict failed: {name}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_correct(args):
    config = load_config(args.config, args.overrides)
    result = harness.run_correction(config)
    summary = result.summary()
    summary["bound_pass"] = bool(result.distance_measured <= result.bound + 10 * config.tolerances.quad_tol)
    if args.format == "json":
        z = np.asarray(result.z_values)
        emit(to_json({
            "summary": summary,
            "points": result.eval_points.tolist(),
            "z": {"re": z.real.tolist(), "im": np.imag(z).tolist()},
        }), args.output)
    else:
        emit(samples_csv(result.eval_points, result.z_values), args.output)
        text = to_json(summary)
        if args.output:
            write_atomic(str(args.output) + ".summary.json", text)
        else:
            sys.stderr.write(text)
    return EXIT_OK if summary["bound_pass"] else EXIT_FAIL


def cmd_flow(args):
    with open(args.config, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = apply_overrides(tomllib.loads(text), args.overrides)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"malformed document: {exc}") from exc
    if "field" not in doc:
        raise ParseError("missing required section [field]")
    try:
        tol = Tolerances(**doc.get("tolerances", {}))
        field = harness.build_field(doc["field"])
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc
    x = np.asarray(args.point, dtype=float)
    if x.shape != (field.dim,):
        raise ValidationError(f"--point needs {field.dim} coordinates, got {x.size}")
    times = np.linspace(args.t_start, args.t_end, args.samples)
    flow = FlowMap(field, tol, use_closed_form=not args.numerical)
    states = flow.orbits(x[None]).positions(times[None])[0]
    if args.format == "json":
        emit(to_json({"t": times.tolist(), "x": states.tolist(),
                      "numerical": bool(flow.numerical)}), args.output)
    else:
        emit(trajectory_csv(times, states), args.output)
    return EXIT_OK


def _demo_row(name, config):
    report = harness.run_experiment(config)
    c = report.correction
    if name == "tightness.toml":
        ratio = c["distance_measured"] / c["bound"] if c["bound"] > 0 else float("nan")
        ok = 0.99 <= ratio <= 1.01 and report.passed
        detail = f"distance/bound = {ratio:.6f}"
    elif name == "periodic.toml":
        ok = (report.z_sup <= config.checks.verify_tol
              and report.y_sup <= c["epsilon_measured"] + config.checks.verify_tol and report.passed)
        detail = f"|z| = {report.z_sup:.2e}, |y| = {report.y_sup:.3f} <= eps = {c['epsilon_measured']:.3f}"
    else:
        ok = report.passed
        detail = (f"distance {c['distance_measured']:.3e} <= "
                  f"{hus_bound(c['epsilon_measured'], config.lam):.3e}")
    return ok, detail


def cmd_demo(args):
    rows = []
    for name in DEMO_CONFIGS:
        ok, detail = _demo_row(name, load_packaged_config(name))
        rows.append((name.removesuffix(".toml"), "pass" if ok else "FAIL", detail))
    width = max(len(r[0]) for r in rows)
    print(f"{'demo':<{width}}  verdict  detail")
    for name, verdict, detail in rows:
        print(f"{name:<{width}}  {verdict:<7}  {detail}")
    return EXIT_OK if all(r[1] == "pass" for r in rows) else EXIT_FAIL


def cmd_catalog(args):
    if args.format == "json":
        data = {kind: {"description": desc, "params": params} for kind, (desc, params) in CATALOG.items()}
        sys.stdout.write(to_json(data))
        return EXIT_OK
    for kind, (desc, params) in CATALOG.items():
        print(f"{kind}: {desc}")
        for key, meaning in params.items():
            print(f"    {key}: {meaning}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="hustab", description="Constructive correction of "
                                     "approximate solutions of Vy = lambda*y + f along flows.")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("config", help="experiment TOML document")
        p.add_argument("-o", "--output", help="output file (default: stdout)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. perturbation.magnitude=0.01")

    p = sub.add_parser("verify", help="correct and run every verification check")
    with_config(p)
    p.add_argument("--timings", action="store_true", help="include per-stage wall times")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("correct", help="write the corrected solution on the sample grid")
    with_config(p)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_correct)

    p = sub.add_parser("flow", help="sample the flow of the config's field along one orbit")
    with_config(p)
    p.add_argument("--point", type=float, nargs="+", required=True)
    p.add_argument("--t-start", type=float, default=0.0)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--samples", type=int, default=11)
    p.add_argument("--numerical", action="store_true", help="integrate even if a closed form exists")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("demo", help="run the built-in showcase configs")
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("catalog", help="list vector field kinds and their parameters")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(func=cmd_catalog)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "samples", 2) < 2:
        parser.error("--samples must be at least 2")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if isinstance(exc.error, NumericalError) else EXIT_USAGE
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (HusError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
