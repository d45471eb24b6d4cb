"""Built-in spacetimes, generated as DSL source and parsed on request."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .dsl import SpacetimeSpec, parse_spacetime
from .errors import SpecError

__all__ = ["CatalogEntry", "Spacetime", "CATALOG", "ALIASES", "names", "get_entry",
           "get_spacetime", "round_s3_source", "S3_CHARTS"]

TWO_PI = repr(2 * math.pi)


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    description: str
    build: Callable[[Mapping], str]  # parameter values -> DSL source
    defaults: Mapping = field(default_factory=dict)
    fields: Mapping = field(default_factory=dict)  # role -> declared field name
    manifest: tuple = ()  # (check name, tolerance)

    def source(self, **overrides) -> str:
        unknown = set(overrides) - set(self.defaults)
        if unknown:
            raise SpecError(f"{self.name} has no parameter(s) {sorted(unknown)}")
        values = {**self.defaults, **{k: float(v) for k, v in overrides.items()}}
        return self.build(values)


@dataclass(frozen=True)
class Spacetime:
    spec: SpacetimeSpec
    entry: CatalogEntry
    fields: Mapping

    @property
    def k(self):
        return self.fields.get("k")

    @property
    def f(self):
        return self.fields.get("f")


# -- Minkowski ---------------------------------------------------------------


def _minkowski_cartesian(p):
    return """\
spacetime minkowski_cartesian
dim 4
chart cart
  coords t x y z
  g tt = -1
  g xx = 1
  g yy = 1
  g zz = 1
  vector k = ( 1 , 1 , 0 , 0 )
  scalar f = t
  sample t -2 2
  sample x -2 2
  sample y -2 2
  sample z -2 2
"""


def _minkowski_spherical(p):
    return """\
spacetime minkowski_spherical
dim 4
chart sph
  coords t r theta phi
  g tt = -1
  g rr = 1
  g theta theta = r^2
  g phi phi = r^2*sin(theta)^2
  vector k = ( 1 , 1 , 0 , 0 )
  scalar f = t
  domain r > 1e-6
  domain sin(theta) > 1e-6
  sample t -2 2
  sample r 0.5 5
  sample theta 0.1 3.04
  sample phi 0 %s
""" % TWO_PI


# -- Kerr --------------------------------------------------------------------

_KERR_DEFS = """\
  def rho2 = r^2 + a^2*cos(theta)^2
  def Delta = r^2 - 2*m*r + a^2
"""

_KERR_TAIL = """\
  domain sin(theta) > 1e-6
  domain rho2 > 1e-6
  event ring = rho2 - 1e-6
  sample t -5 5
  sample r {rlo} {rhi}
  sample theta 0.05 1.5
  sample phi 0 {two_pi}
"""


def _kerr_head(name, p):
    return (f"spacetime {name}\ndim 4\n"
            f"param m = {p['m']!r} require m > 0\n"
            f"param a = {p['a']!r} require a > m\n"
            "chart bl\n  coords t r theta phi\n" + _KERR_DEFS)


def _kerr_fast(p):
    return _kerr_head("kerr_fast", p) + """\
  g tt = -(1 - 2*m*r/rho2)
  g rr = rho2/Delta
  g theta theta = rho2
  g phi phi = (r^2 + a^2 + 2*m*r*a^2*sin(theta)^2/rho2)*sin(theta)^2
  g t phi = -2*m*r*a*sin(theta)^2/rho2
  vector k = ( (r^2 + a^2)/Delta , 1 , 0 , a/Delta )
  vector K = ( exp(r)*(r^2 + a^2)/Delta , exp(r) , 0 , exp(r)*a/Delta )
  scalar f = r
  scalar f_time = t
""" + _KERR_TAIL.format(rlo=0.5, rhi=5, two_pi=TWO_PI)


def _kerr_conformal(p):
    return _kerr_head("kerr_conformal", p) + """\
  def conf = exp(2*r)
  g tt = -conf*(1 - 2*m*r/rho2)
  g rr = conf*rho2/Delta
  g theta theta = conf*rho2
  g phi phi = conf*(r^2 + a^2 + 2*m*r*a^2*sin(theta)^2/rho2)*sin(theta)^2
  g t phi = -conf*2*m*r*a*sin(theta)^2/rho2
  vector K = ( exp(-2*r)*(r^2 + a^2)/Delta , exp(-2*r) , 0 , exp(-2*r)*a/Delta )
  vector k = ( (r^2 + a^2)/Delta , 1 , 0 , a/Delta )
  scalar f = r
""" + _KERR_TAIL.format(rlo=0.5, rhi=3, two_pi=TWO_PI)


# -- S^3 atlas ---------------------------------------------------------------

AMBIENT = ("x1", "y1", "x2", "y2")
# Hopf field d/ds (x1 + i y1, x2 + i y2) = i (x1 + i y1, x2 + i y2)
_HOPF = {"x1": "-y1", "y1": "x1", "x2": "-y2", "y2": "x2"}
S3_CHARTS = tuple((c, s) for c in AMBIENT for s in (1, -1))
S3_CHART_MARGIN = 0.2  # chart domain: eliminated coordinate^2 > this


def _chart_name(coord, sign):
    return coord + ("p" if sign > 0 else "m")


def _ambient_value(name, elim, sign):
    """Ambient coordinate ``name`` written in the chart eliminating ``elim``."""
    if name == elim:
        return "u" if sign > 0 else "(-u)"
    return name


def _hopf_component(name, elim, sign):
    expr = _HOPF[name]
    neg = expr.startswith("-")
    base = _ambient_value(expr.lstrip("-"), elim, sign)
    return f"-{base}" if neg else base


def _s3_chart(elim, sign, variant, with_time):
    coords = [c for c in AMBIENT if c != elim]
    out = [f"chart {_chart_name(elim, sign)}"]
    out.append("  coords " + " ".join((["t"] if with_time else []) + coords))
    out.append("  def w = 1 - " + " - ".join(f"{c}^2" for c in coords))
    out.append("  def u = sqrt(w)")
    hopf = [_hopf_component(c, elim, sign) for c in coords]
    if variant == "lorentz":
        # kb_i = round metric applied to the Hopf field
        for i, ci in enumerate(coords):
            terms = [hopf[i]] + [f"{ci}*{cj}*({hj})/w" for cj, hj in zip(coords, hopf)]
            out.append(f"  def kb_{ci} = " + " + ".join(terms))
    if with_time:
        out.append("  g tt = -1")
    for i, ci in enumerate(coords):
        for cj in coords[i:]:
            val = f"{ci}*{cj}/w"
            if ci == cj:
                val = "1 + " + val
            if variant == "lorentz":
                val = f"{val} - 2*kb_{ci}*kb_{cj}"
            out.append(f"  g {ci} {cj} = {val}")
    comps = " , ".join(hopf)
    if with_time:
        out.append(f"  vector k = ( 1 , {comps} )")
        out.append(f"  vector hopf = ( 0 , {comps} )")
        out.append("  scalar f = t")
    else:
        out.append(f"  vector k = ( {comps} )")
    out.append(f"  domain w > {S3_CHART_MARGIN!r}")
    if with_time:
        out.append("  sample t -1 1")
    for c in coords:
        out.append(f"  sample {c} -0.9 0.9")
    return out


def _s3_transition(src, dst, with_time):
    (ei, si), (ej, sj) = src, dst
    out = [f"transition {_chart_name(ei, si)} -> {_chart_name(ej, sj)}"]
    if with_time:
        out.append("  map t = t")
    for c in AMBIENT:
        if c == ej:
            continue
        out.append(f"  map {c} = " + (("sqrt(w)" if si > 0 else "-sqrt(w)") if c == ei else c))
    # in the source chart, the target's domain reads ej^2 > margin
    out.append(f"  overlap {ej}^2 > {S3_CHART_MARGIN!r}")
    out.append(f"  overlap {ej} {'>' if sj > 0 else '<'} 0")
    return out


def _s3_atlas(name, variant, with_time, signature=None):
    lines = [f"spacetime {name}", f"dim {4 if with_time else 3}"]
    if signature:
        lines.append(f"signature {signature}")
    for elim, sign in S3_CHARTS:
        lines += _s3_chart(elim, sign, variant, with_time)
    for src in S3_CHARTS:
        for dst in S3_CHARTS:
            if src[0] != dst[0]:
                lines += _s3_transition(src, dst, with_time)
    return "\n".join(lines) + "\n"


def _r_x_s3(p):
    return _s3_atlas("r_x_s3", "round", True)


def _s3_lorentz_3d(p):
    return _s3_atlas("s3_lorentz_3d", "lorentz", False)


def round_s3_source() -> str:
    """The round unit 3-sphere on the same 8-chart atlas (Riemannian)."""
    return _s3_atlas("round_s3", "round", False, signature="riemannian")


# -- registry ----------------------------------------------------------------

CATALOG = {e.name: e for e in (
    CatalogEntry(
        "minkowski_cartesian", "flat spacetime, parallel null field k = d/dt + d/dx",
        _minkowski_cartesian, {}, {"k": "k", "f": "f"},
        (("k_null", 1e-12), ("geodesic", 1e-12), ("ricci_flat", 1e-12),
         ("optics_zero", 1e-12))),
    CatalogEntry(
        "minkowski_spherical", "flat spacetime in spherical coordinates, radial null field",
        _minkowski_spherical, {}, {"k": "k", "f": "f"},
        (("k_null", 1e-12), ("geodesic", 1e-10), ("ricci_flat", 1e-9),
         ("expansion_2_over_r", 1e-10))),
    CatalogEntry(
        "kerr_fast", "rapidly rotating Kerr (a > m), outgoing principal null field",
        _kerr_fast, {"m": 1.0, "a": 2.0}, {"k": "k", "f": "f", "K": "K"},
        (("k_null", 1e-9), ("geodesic", 1e-9), ("ricci_flat", 1e-8),
         ("kerr_twist_closed_form", 1e-7), ("k_of_r_is_one", 1e-12))),
    CatalogEntry(
        "kerr_conformal", "Kerr rescaled by exp(2r), field K = exp(-2r) k",
        _kerr_conformal, {"m": 1.0, "a": 2.0}, {"k": "K", "f": "f"},
        (("k_null", 1e-9), ("geodesic", 1e-9), ("conformal_ric_KK", 1e-6),
         ("equatorial_twist_zero", 1e-9))),
    CatalogEntry(
        "r_x_s3", "R x round S^3, null field d/dt + Hopf field",
        _r_x_s3, {}, {"k": "k", "f": "f", "hopf": "hopf"},
        (("hopf_unit", 1e-10), ("hopf_killing", 1e-9), ("hopf_divergence_free", 1e-10),
         ("ric_kk_two", 1e-8), ("geodesic", 1e-10), ("twist_sq_four", 1e-8),
         ("overlap_consistency", 1e-7))),
    CatalogEntry(
        "s3_lorentz_3d", "S^3 with the Hopf direction flipped timelike",
        _s3_lorentz_3d, {}, {"k": "k", "contact": "k"},
        (("k_unit_timelike", 1e-10), ("hopf_killing", 1e-9), ("contact_volume", 0.1),
         ("reeb", 1e-8), ("overlap_consistency", 1e-7))),
)}

ALIASES = {"minkowski": "minkowski_cartesian", "kerr": "kerr_fast"}


def names() -> list:
    return list(CATALOG)


def get_entry(name: str) -> CatalogEntry:
    try:
        return CATALOG[ALIASES.get(name, name)]
    except KeyError:
        raise SpecError(f"unknown catalog entry {name!r}; known: {', '.join(CATALOG)}") from None


@functools.lru_cache(maxsize=64)
def _parse_cached(source: str) -> SpacetimeSpec:
    return parse_spacetime(source)


def get_spacetime(name: str, **overrides) -> Spacetime:
    """Parsed spec of a catalog entry plus its distinguished field names.

    Parameter overrides are checked against the entry's constraints, so
    ``get_spacetime("kerr_fast", a=0.5)`` raises ``ConstraintError``.
    """
    entry = get_entry(name)
    spec = _parse_cached(entry.source(**overrides))
    return Spacetime(spec, entry, dict(entry.fields))
