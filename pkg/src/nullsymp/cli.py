"""Command-line driver: ``nullsymp {list,show,check,scan,flow}``.

Exit codes: 0 success, 1 check failure, 2 usage or spec error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, catalog
from .checks import run_checks
from .dsl import format_spacetime, parse_expr, parse_spacetime
from .errors import NullSympError, PreconditionError, SpecError
from .flows import integrate_flow, monitor_along
from .geometry import engine
from .symplectic import nondegeneracy_report

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
SCHEMA = 1
SCAN_COLUMNS = ("iota2", "kf", "pfaffian", "det_frame", "det_identity_residual",
                "liouville_residual", "nondegenerate")
FLOW_MONITORS = ("iota2", "theta", "ric_kk", "r1", "r2", "rho2")


class UsageError(Exception):
    pass


# -- output formatting ---------------------------------------------------------


def fmt_float(x) -> str:
    """17 significant digits, enough to reimport the exact double."""
    return format(float(x), ".17g")


def to_json(obj, indent=2, _level=0) -> str:
    """JSON text with floats at 17 significant digits; ``indent=None`` is one line."""
    if indent is None:
        if isinstance(obj, dict):
            return "{" + ", ".join(f"{to_json(str(k))}: {to_json(v, None)}"
                                   for k, v in obj.items()) + "}"
        if isinstance(obj, (list, tuple, np.ndarray)):
            return "[" + ", ".join(to_json(v, None) for v in obj) + "]"
        return to_json(obj)
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if obj is None or (isinstance(obj, float) and not math.isfinite(obj)):
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{to_json(str(k))}: {to_json(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return ("[\n" + ",\n".join(inner + to_json(v, indent, _level + 1) for v in obj)
                + "\n" + pad + "]")
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    x = float(x)
    return fmt_float(x) if math.isfinite(x) else ""


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w", newline="")


# -- argument helpers ----------------------------------------------------------


def _kv_list(items, what) -> dict:
    out = {}
    for item in items or ():
        for part in item.split(","):
            part = part.strip()
            if not part:
                continue
            key, sep, val = part.partition("=")
            if not sep or not key.strip():
                raise UsageError(f"malformed {what} {part!r}; expected name=value")
            try:
                out[key.strip()] = float(parse_expr(val.strip()).value)
            except (NullSympError, AttributeError):
                raise UsageError(f"{what} {key.strip()!r} needs a numeric value") from None
    return out


def _resolve(target, params):
    """Catalog entry or DSL file -> (spec, fields, manifest)."""
    path = Path(target)
    if path.suffix or path.exists():
        if not path.exists():
            raise SpecError(f"no such file {target!r}")
        if params:
            raise UsageError("--param applies to catalog entries only")
        spec = parse_spacetime(path.read_text())
        declared = set().union(*(set(c.vectors) | set(c.scalars) for c in spec.charts))
        fields = {role: role for role in ("k", "f", "K") if role in declared}
        return spec, fields, ()
    st = catalog.get_spacetime(target, **params)
    return st.spec, st.fields, st.entry.manifest


def parse_grid(text, coords) -> list:
    """``"r=0.5:5:50,theta=0.05:1.5:50"`` -> ``[(name, values), (name, values)]``."""
    axes = []
    for part in text.split(","):
        name, sep, rng = part.strip().partition("=")
        bits = rng.split(":")
        if not sep or len(bits) != 3:
            raise UsageError(f"malformed grid axis {part!r}; expected name=lo:hi:n")
        if name not in coords:
            raise UsageError(f"grid coordinate {name!r} not in chart coordinates {coords}")
        try:
            lo, hi = (float(parse_expr(b).value) for b in bits[:2])
            n = int(bits[2])
        except (ValueError, AttributeError, NullSympError):
            raise UsageError(f"malformed grid axis {part!r}") from None
        if n < 1 or not lo <= hi:
            raise UsageError(f"grid axis {name!r} needs n >= 1 and lo <= hi")
        axes.append((name, np.linspace(lo, hi, n)))
    if len(axes) != 2 or axes[0][0] == axes[1][0]:
        raise UsageError("grid needs exactly two distinct coordinates")
    return axes


def _chart(spec, name):
    try:
        return spec.chart(name)
    except KeyError as e:
        raise UsageError(e.args[0]) from None


def _default_coord(chart, name):
    lo, hi = chart.sample_box.get(name, (0.0, 0.0))
    return 0.0 if lo <= 0.0 <= hi else 0.5 * (lo + hi)


def _coord_header(spec):
    first = spec.charts[0].coords
    if all(c.coords == first for c in spec.charts) and not set(first) & set(FLOW_MONITORS):
        return list(first)
    return [f"coord{i + 1}" for i in range(spec.dim)]


# -- commands ------------------------------------------------------------------


def cmd_list(args, out):
    for name, entry in catalog.CATALOG.items():
        out.write(f"{name}\t{entry.description}\n")
    return EXIT_OK


def cmd_show(args, out):
    params = _kv_list(args.param, "parameter")
    st = catalog.get_spacetime(args.name, **params)
    if args.dsl:
        out.write(format_spacetime(st.spec))
        return EXIT_OK
    spec = st.spec
    info = {
        "schema": SCHEMA, "name": spec.name, "description": st.entry.description,
        "dim": spec.dim, "signature": spec.signature, "params": dict(spec.params),
        "charts": [{"name": c.name, "coords": list(c.coords),
                    "domain": [str(d) for d in c.domain], "vectors": list(c.vectors),
                    "scalars": list(c.scalars), "events": list(c.events)}
                   for c in spec.charts],
        "transitions": len(spec.transitions),
        "fields": dict(st.fields),
        "manifest": [{"name": n, "tolerance": t} for n, t in st.entry.manifest],
    }
    out.write(to_json(info) + "\n")
    return EXIT_OK


def _tol_scale():
    raw = os.environ.get("NULLSYMP_TOL_SCALE")
    if raw in (None, ""):
        return 1.0
    try:
        val = float(raw)
    except ValueError:
        raise UsageError(f"NULLSYMP_TOL_SCALE must be a number, got {raw!r}") from None
    if not val > 0:
        raise UsageError("NULLSYMP_TOL_SCALE must be positive")
    return val


def cmd_check(args, out):
    params = _kv_list(args.param, "parameter")
    tols = _kv_list(args.tol, "tolerance")
    spec, fields, manifest = _resolve(args.target, params)
    scale = _tol_scale()
    if args.points < 1:
        raise UsageError("--points must be >= 1")
    try:
        records = run_checks(spec, fields, manifest, points=args.points, seed=args.seed,
                             tol_overrides=tols, tol_scale=scale,
                             corrupt_alpha=args.corrupt_alpha)
    except KeyError as e:
        raise UsageError(str(e.args[0])) from None
    counts = {s: sum(r.status == s for r in records) for s in ("pass", "fail", "skip")}
    broken = any(r.value is not None and not math.isfinite(r.value) for r in records)
    report = {
        "schema": SCHEMA, "tool": "nullsymp", "version": __version__, "spec": spec.name,
        "params": dict(spec.params), "seed": args.seed, "points": args.points,
        "tol_scale": scale, "corrupt_alpha": bool(args.corrupt_alpha),
        "checks": [r.as_dict() for r in records],
        "summary": {**counts, "numerical_failure": broken},
    }
    if not args.reproducible:
        report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    out.write(to_json(report) + "\n")
    if broken:
        return EXIT_NUMERIC
    return EXIT_FAIL if counts["fail"] else EXIT_OK


def cmd_scan(args, out_default):
    params = _kv_list(args.param, "parameter")
    spec, fields, _ = _resolve(args.target, params)
    if spec.dim != 4 or "k" not in fields or "f" not in fields:
        raise UsageError(f"{spec.name} has no 4-d symplectic data to scan")
    chart = _chart(spec, args.chart)
    axes = parse_grid(args.grid, chart.coords)
    fixed = {c: _default_coord(chart, c) for c in chart.coords}
    at = _kv_list(args.at, "--at value")
    for name, val in at.items():
        if name not in chart.coords:
            raise UsageError(f"--at coordinate {name!r} not in chart coordinates")
        fixed[name] = val
    eng = engine(spec, chart)
    extra = ("ric_kk",) if args.field == "ric_kk" else ()
    (n1, v1), (n2, v2) = axes
    failures = 0
    stream = _open_out(args.output)
    try:
        stream.write(",".join(list(chart.coords) + list(SCAN_COLUMNS) + list(extra)) + "\n")
        for a in v1:
            for b in v2:
                p = dict(fixed)
                p[n1], p[n2] = float(a), float(b)
                point = [p[c] for c in chart.coords]
                row = [_cell(x) for x in point]
                vals = [None] * (len(SCAN_COLUMNS) + len(extra))
                if eng.in_domain(point):
                    try:
                        rep = nondegeneracy_report(spec, chart, fields["k"], fields["f"], point)
                        vals = [rep.iota2, rep.kf, rep.pfaffian, rep.det_frame,
                                rep.det_identity_residual, rep.liouville_residual,
                                rep.nondegenerate]
                        if extra:
                            geo = eng.at(point)
                            k = geo.jet(fields["k"], 0).value
                            vals.append(float(k @ geo.ricci @ k))
                    except (NullSympError, ArithmeticError, np.linalg.LinAlgError):
                        failures += 1
                row += [_cell(x) for x in vals]
                stream.write(",".join(row) + "\n")
    finally:
        if stream is not sys.stdout:
            stream.close()
    if failures:
        sys.stderr.write(f"scan: {failures} in-domain cells failed to evaluate\n")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_flow(args, out_default):
    params = _kv_list(args.param, "parameter")
    spec, fields, _ = _resolve(args.target, params)
    chart = _chart(spec, args.chart)
    try:
        start = [float(parse_expr(s.strip()).value) for s in args.start.split(",")]
    except (NullSympError, AttributeError):
        raise UsageError(f"malformed --start {args.start!r}") from None
    if len(start) != chart.dim:
        raise UsageError(f"--start needs {chart.dim} coordinates for chart {chart.name!r}")
    field = args.field or fields.get("k")
    if field is None:
        raise UsageError("no field given and the spacetime has no distinguished k")
    if not engine(spec, chart).in_domain(start):
        raise UsageError(f"start point {start} outside chart {chart.name!r}")
    s_eval = None
    if args.samples:
        s_eval = np.linspace(0.0, args.smax, args.samples + 1)[1:]
    res = integrate_flow(spec, chart, start, field, (0.0, args.smax), tol=args.tol,
                         s_eval=s_eval,
                         closed_orbit={"return_tol": 1e-6} if args.closed_orbit else None)
    if args.monitors:
        monitor_along(spec, res, field)
    trailer = {"schema": SCHEMA, "spec": spec.name, "field": field,
               "termination": res.record()}
    if args.monitors:
        tr = [abs(x) for x in res.detail.get("transport_residual", []) if x is not None]
        trailer["transport_residual_max"] = max(tr) if tr else None
    stream = _open_out(args.output)
    try:
        stream.write(",".join(["s", "chart"] + _coord_header(spec) + list(FLOW_MONITORS)) + "\n")
        for smp in res.samples:
            row = [_cell(smp.s), smp.chart] + [_cell(x) for x in smp.point]
            row += [_cell(smp.monitors.get(m)) for m in FLOW_MONITORS]
            stream.write(",".join(row) + "\n")
        stream.write("# " + to_json(trailer, indent=None) + "\n")
    finally:
        if stream is not sys.stdout:
            stream.close()
    return EXIT_NUMERIC if res.reason == "step_underflow" else EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nullsymp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"nullsymp {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list catalog entries")

    s = sub.add_parser("show", help="describe a catalog entry")
    s.add_argument("name")
    s.add_argument("--dsl", action="store_true", help="print the entry as DSL source")
    s.add_argument("--param", action="append", metavar="NAME=VALUE")

    c = sub.add_parser("check", help="run the validation battery")
    c.add_argument("target", help="catalog name or DSL file")
    c.add_argument("--points", type=int, default=100)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", action="append", metavar="CHECK=VALUE",
                   help="override a check tolerance (repeatable)")
    c.add_argument("--param", action="append", metavar="NAME=VALUE")
    c.add_argument("--corrupt-alpha", action="store_true",
                   help="mutation hook: break the exterior derivative of alpha")
    c.add_argument("--reproducible", action="store_true", help="omit the timestamp")

    g = sub.add_parser("scan", help="grid scan of the symplectic report")
    g.add_argument("target")
    g.add_argument("--field", choices=("iota2", "pfaffian", "det_residual", "ric_kk"),
                   default="iota2")
    g.add_argument("--grid", required=True, metavar="C1=LO:HI:N,C2=LO:HI:N")
    g.add_argument("--at", action="append", metavar="COORD=VALUE")
    g.add_argument("--chart")
    g.add_argument("--param", action="append", metavar="NAME=VALUE")
    g.add_argument("-o", "--output")

    f = sub.add_parser("flow", help="integrate a field's integral curve")
    f.add_argument("target")
    f.add_argument("--start", required=True, metavar="X1,X2,...")
    f.add_argument("--chart")
    f.add_argument("--field")
    f.add_argument("--smax", type=float, default=10.0,
                   help="end parameter; negative integrates backward")
    f.add_argument("--tol", type=float, default=1e-10)
    f.add_argument("--samples", type=int, default=0,
                   help="uniformly spaced output samples (default: every accepted step)")
    f.add_argument("--monitors", action="store_true")
    f.add_argument("--closed-orbit", action="store_true", help="stop at the first return")
    f.add_argument("--param", action="append", metavar="NAME=VALUE")
    f.add_argument("-o", "--output")
    return p


COMMANDS = {"list": cmd_list, "show": cmd_show, "check": cmd_check, "scan": cmd_scan,
            "flow": cmd_flow}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, sys.stdout)
    except (UsageError, SpecError) as e:
        sys.stderr.write(f"nullsymp: error: {e}\n")
        return EXIT_USAGE
    except (PreconditionError, NullSympError) as e:
        sys.stderr.write(f"nullsymp: numerical failure: {e}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
