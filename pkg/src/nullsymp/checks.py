"""Check battery behind the ``check`` command.

Each check is either pointwise (evaluated at every sampled point, worst value
kept) or global (one number for the whole spec).  Pointwise checks return a
float; they may raise ``Skip`` when they do not apply at a point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import atlas
from .errors import NullSympError
from .flows import field_overlap_residual
from .geometry import engine, killing_residual, tensor_symmetry_residuals
from .optics import Congruence, pregeodesic_residual, raychaudhuri_residuals
from .symplectic import closedness_residual, contact_check_3d, nondegeneracy_report

__all__ = ["CheckRecord", "Skip", "run_checks", "UNIVERSAL"]


class Skip(Exception):
    """The check does not apply here."""


@dataclass
class CheckRecord:
    name: str
    status: str  # pass | fail | skip
    value: float | None
    tolerance: float
    location: dict | None = None
    detail: str | None = None
    kind: str = "max"  # "max": value <= tol passes; "min": value >= tol passes

    def as_dict(self) -> dict:
        out = {"name": self.name, "status": self.status, "value": self.value,
               "tolerance": self.tolerance, "kind": self.kind, "location": self.location}
        if self.detail:
            out["detail"] = self.detail
        return out


class _Ctx:
    """Lazily shared per-point objects."""

    def __init__(self, spec, fields, chart, point, corrupt_alpha):
        self.spec, self.fields, self.chart, self.point = spec, fields, chart, point
        self.corrupt_alpha = corrupt_alpha
        self._cache = {}

    def need(self, role):
        name = self.fields.get(role)
        if name is None:
            raise Skip(f"no {role} field")
        ch = self.spec.chart(self.chart)
        if name not in ch.vectors and name not in ch.scalars:
            raise Skip(f"{name} not declared on chart {self.chart}")
        return name

    def get(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def geo(self):
        return self.get("geo", lambda: engine(self.spec, self.chart).at(self.point))

    @property
    def cong(self):
        k = self.need("k")
        if self.spec.dim != 4 or self.spec.signature != "lorentzian":
            raise Skip("optics needs a 4-d Lorentzian chart")
        return self.get("cong", lambda: Congruence(self.spec, self.chart, k, self.point))

    @property
    def report(self):
        k, f = self.need("k"), self.need("f")
        if self.spec.dim != 4:
            raise Skip("symplectic checks need dimension 4")
        return self.get("rep", lambda: nondegeneracy_report(self.spec, self.chart, k, f,
                                                            self.point))

    def coord(self, name):
        ch = self.spec.chart(self.chart)
        if name not in ch.coords:
            raise Skip(f"chart has no coordinate {name}")
        return self.point[ch.index(name)]

    def param(self, name):
        return self.spec.params[name]


# -- universal pointwise checks -----------------------------------------------


def _tensor_symmetries(c):
    res = tensor_symmetry_residuals(c.spec, c.chart, c.point)
    scale = 1.0 + float(np.max(np.abs(c.geo.riemann)))
    return max(res.values()) / scale


def _raychaudhuri(c):
    k = c.need("k")
    if c.spec.dim != 4 or c.spec.signature != "lorentzian":
        raise Skip("needs a 4-d Lorentzian chart")
    r = raychaudhuri_residuals(c.spec, c.chart, k, c.point)
    return max(abs(r.r1), abs(r.r2))


def _pregeodesic(c):
    K = c.need("K")
    r = pregeodesic_residual(c.spec, c.chart, K, c.point)
    return max(abs(r.r3), abs(r.r4))


def _pairing_kL(c):
    return abs(c.report.pairing_kL_residual)


def _pairing_xy(c):
    return abs(c.report.pairing_xy_residual)


def _lagrangian_frame(c):
    r = c.report
    return max(abs(r.omega_kx), abs(r.omega_ky))


def _det_identity(c):
    return c.report.det_identity_relative


def _liouville(c):
    r = c.report
    if r.liouville_residual is None:
        raise Skip("k(f) vanishes")
    return r.liouville_residual


def _closedness(c):
    k, f = c.need("k"), c.need("f")
    if c.spec.dim != 4:
        raise Skip("needs dimension 4")
    return closedness_residual(c.spec, c.chart, k, f, c.point, corrupt_alpha=c.corrupt_alpha)


UNIVERSAL = (
    ("tensor_symmetries", 1e-8, _tensor_symmetries),
    ("raychaudhuri", 1e-7, _raychaudhuri),
    ("pregeodesic_transport", 1e-7, _pregeodesic),
    ("pairing_kL", 1e-8, _pairing_kL),
    ("pairing_xy", 1e-7, _pairing_xy),
    ("pairing_k_screen", 1e-9, _lagrangian_frame),
    ("det_identity", 1e-7, _det_identity),
    ("liouville", 1e-8, _liouville),
    ("closedness", 1e-8, _closedness),
)


# -- manifest checks ----------------------------------------------------------


def _k_null(c):
    k = c.need("k")
    v = c.geo.jet(k, 0).value
    return abs(c.geo.inner(v, v))


def _geodesic(c):
    return c.cong.geodesic_defect


def _ricci_flat(c):
    return float(np.max(np.abs(c.geo.ricci)))


def _optics_zero(c):
    s = c.cong.scalars
    return max(abs(s.theta), s.shear_sq, s.twist_sq)


def _expansion_2_over_r(c):
    return abs(c.cong.scalars.theta - 2 / c.coord("r"))


def _kerr_twist(c):
    r, th, a = c.coord("r"), c.coord("theta"), c.param("a")
    expected = 4 * a * a * math.cos(th) ** 2 / (r * r + a * a * math.cos(th) ** 2) ** 2
    return abs(c.cong.scalars.twist_sq - expected) / expected


def _k_of_r(c):
    k = c.need("k")
    return abs(c.geo.jet(k, 0).value[c.spec.chart(c.chart).index("r")] - 1)


def _conformal_ric(c):
    expected = 2 * math.exp(-4 * c.coord("r"))
    return abs(c.cong.ric_kk - expected) / expected


def _equatorial_twist(c):
    k = c.need("k")
    p = list(c.point)
    p[c.spec.chart(c.chart).index("theta")] = math.pi / 2
    return Congruence(c.spec, c.chart, k, p).scalars.twist_sq


def _hopf_name(c):
    return c.fields.get("hopf") or c.need("k")


def _hopf_unit(c):
    v = c.geo.jet(_hopf_name(c), 0).value
    return abs(c.geo.inner(v, v) - 1)


def _hopf_killing(c):
    return float(np.max(np.abs(killing_residual(c.spec, c.chart, _hopf_name(c), c.point))))


def _divergence_free(c):
    return abs(c.geo.divergence(c.geo.jet(c.need("k"), 1)))


def _ric_kk_two(c):
    return abs(c.cong.ric_kk - 2)


def _twist_four(c):
    return abs(c.cong.scalars.twist_sq - 4)


def _k_unit_timelike(c):
    v = c.geo.jet(c.need("k"), 0).value
    return abs(c.geo.inner(v, v) + 1)


def _contact(c):
    return c.get("contact", lambda: contact_check_3d(c.spec, c.chart, c.need("k"), c.point))


def _reeb(c):
    r = _contact(c)
    return max(r.reeb_residual_interior, r.reeb_residual_pairing)


POINTWISE = {
    "k_null": _k_null, "geodesic": _geodesic, "ricci_flat": _ricci_flat,
    "optics_zero": _optics_zero, "expansion_2_over_r": _expansion_2_over_r,
    "kerr_twist_closed_form": _kerr_twist, "k_of_r_is_one": _k_of_r,
    "conformal_ric_KK": _conformal_ric, "equatorial_twist_zero": _equatorial_twist,
    "hopf_unit": _hopf_unit, "hopf_killing": _hopf_killing,
    "hopf_divergence_free": _divergence_free, "ric_kk_two": _ric_kk_two,
    "twist_sq_four": _twist_four, "k_unit_timelike": _k_unit_timelike, "reeb": _reeb,
}


def _overlap_consistency(spec, fields, points, rng, ctxs):
    k = fields.get("k")
    if k is None or not spec.transitions:
        raise Skip("no atlas or field")
    value, where = field_overlap_residual(spec, k, 50, rng)
    loc = None if where is None else {"chart": where[0], "target": where[1],
                                      "point": list(where[2])}
    return value, loc


def _contact_volume(spec, fields, points, rng, ctxs):
    """Ratio of the smallest to the median volume factor; must stay above tol."""
    vals = []
    for c in ctxs:
        try:
            vals.append((abs(_contact(c).volume_factor), c))
        except Skip:
            continue
    if not vals:
        raise Skip("no contact data")
    mags = np.array([v for v, _ in vals])
    i = int(np.argmin(mags))
    c = vals[i][1]
    return float(mags[i] / np.median(mags)), {"chart": c.chart, "point": list(c.point)}


GLOBAL = {"overlap_consistency": _overlap_consistency, "contact_volume": _contact_volume}
LOWER_BOUND = {"contact_volume"}


# -- driver -------------------------------------------------------------------


def run_checks(spec, fields, manifest=(), points=100, seed=0, tol_overrides=None,
               tol_scale=1.0, corrupt_alpha=False) -> list:
    """Run the universal suite plus ``manifest`` at ``points`` random points."""
    tol_overrides = dict(tol_overrides or {})
    rng = np.random.default_rng(seed)
    sampled = atlas.sample_points(spec, points, rng)
    ctxs = [_Ctx(spec, fields, ch, tuple(p), corrupt_alpha) for ch, p in sampled]
    plan = [(name, tol, fn, "max") for name, tol, fn in UNIVERSAL]
    for name, tol in manifest:
        if name in POINTWISE:
            plan.append((name, tol, POINTWISE[name], "max"))
        elif name in GLOBAL:
            plan.append((name, tol, GLOBAL[name], "min" if name in LOWER_BOUND else "max"))
        else:
            raise KeyError(f"unknown manifest check {name!r}")
    unknown = set(tol_overrides) - {p[0] for p in plan}
    if unknown:
        raise KeyError(f"--tol names unknown checks: {sorted(unknown)}")

    records = []
    for name, tol, fn, kind in plan:
        tol = float(tol_overrides.get(name, tol)) * tol_scale
        if name in GLOBAL:
            records.append(_run_global(name, tol, fn, kind, spec, fields, rng, ctxs))
        else:
            records.append(_run_pointwise(name, tol, fn, ctxs))
    return records


def _run_pointwise(name, tol, fn, ctxs):
    worst, where, detail = None, None, None
    for c in ctxs:
        loc = {"chart": c.chart, "point": list(c.point)}
        try:
            v = float(fn(c))
        except Skip:
            continue
        except (NullSympError, ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
            v, detail = math.nan, f"{type(e).__name__}: {e}"
        if math.isnan(v):
            worst, where = v, loc
            detail = detail or "numerical breakdown"
            break
        if worst is None or v > worst:
            worst, where = v, loc
    if worst is None:
        return CheckRecord(name, "skip", None, tol, detail="not applicable")
    return CheckRecord(name, "pass" if worst <= tol else "fail", worst, tol, where, detail)


def _run_global(name, tol, fn, kind, spec, fields, rng, ctxs):
    try:
        v, loc = fn(spec, fields, None, rng, ctxs)
    except Skip as e:
        return CheckRecord(name, "skip", None, tol, detail=str(e), kind=kind)
    ok = v >= tol if kind == "min" else v <= tol
    return CheckRecord(name, "pass" if ok else "fail", float(v), tol, loc, kind=kind)
