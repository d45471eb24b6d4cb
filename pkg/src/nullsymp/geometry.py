"""Pointwise Lorentzian geometry in a coordinate basis.

Every tensor is a dense numpy array.  Index conventions::

    dg[c, a, b]       = d_c g_ab
    ddg[c, d, a, b]   = d_c d_d g_ab
    gamma[a, b, c]    = Gamma^a_bc
    dgamma[e, a, b, c] = d_e Gamma^a_bc
    riemann[a, b, c, d] = R^a_bcd
        = d_c Gamma^a_db - d_d Gamma^a_cb + Gamma^a_ce Gamma^e_db - Gamma^a_de Gamma^e_cb
    ricci[b, d] = R^a_bad
    nabla[a, b]  = (nabla k)^a_b = d_b k^a + Gamma^a_cb k^c

Metric components, fields and their partial derivatives come from symbolic
differentiation of the chart expressions, compiled once per chart.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import expr as ex
from .dsl import Chart, SpacetimeSpec
from .errors import DegenerateMetricError, OutOfDomainError, PreconditionError

__all__ = [
    "MetricValue", "ConnectionValue", "CurvatureValue", "CovariantDerivative",
    "CausalClass", "FieldJet", "ChartEngine", "PointGeometry", "engine",
    "metric_at", "christoffel_at", "curvature_at", "covariant_derivative_at",
    "causal_classify", "killing_residual", "metric_compatibility_residual",
    "ricci_scalar", "DOMAIN_MARGIN",
]

DOMAIN_MARGIN = 1e-12
NULL_TOL = 1e-9


@dataclass(frozen=True)
class MetricValue:
    point: tuple
    g: np.ndarray
    ginv: np.ndarray
    signature: tuple  # (negative count, positive count)


@dataclass(frozen=True)
class ConnectionValue:
    point: tuple
    gamma: np.ndarray


@dataclass(frozen=True)
class CurvatureValue:
    point: tuple
    riemann: np.ndarray
    ricci: np.ndarray


@dataclass(frozen=True)
class CovariantDerivative:
    point: tuple
    nabla: np.ndarray
    directional: np.ndarray | None = None


class CausalClass(NamedTuple):
    kind: str
    norm: float


@dataclass(frozen=True)
class FieldJet:
    """Vector field components and coordinate partials at a point.

    ``d1[e, a] = d_e X^a`` and ``d2[e, f, a] = d_e d_f X^a``.
    """

    value: np.ndarray
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None


@dataclass(frozen=True)
class ScalarJet:
    value: float
    d1: np.ndarray | None = None
    d2: np.ndarray | None = None


def _sym_pairs(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


class _Scatter:
    """Compile a list of expressions and scatter outputs into index arrays."""

    def __init__(self, exprs, argnames):
        self.program = ex.compile_exprs(tuple(exprs), tuple(argnames))

    def __call__(self, args):
        return np.array(self.program(*args), dtype=float)


class ChartEngine:
    """Compiled evaluators for one chart of one spec.  Thread-safe after use."""

    def __init__(self, spec: SpacetimeSpec, chart: Chart):
        self.spec = spec
        self.chart = chart
        self.n = chart.dim
        self.argnames = tuple(chart.coords) + spec.param_names
        self.params = spec.param_values
        self._programs = {}

    # -- argument handling
    def args(self, point):
        point = tuple(float(x) for x in point)
        if len(point) != self.n:
            raise ValueError(f"point has {len(point)} coordinates, chart {self.chart.name!r} "
                             f"has {self.n}")
        return point + self.params

    def _cached(self, key, build):
        prog = self._programs.get(key)
        if prog is None:
            prog = build()
            self._programs[key] = prog
        return prog

    # -- domain
    def margins(self, point) -> np.ndarray:
        if not self.chart.domain:
            return np.array([np.inf])
        prog = self._cached(("domain",), lambda: _Scatter(
            [c.margin_expr for c in self.chart.domain], self.argnames))
        try:
            return prog(self.args(point))
        except Exception:
            return np.array([-np.inf])

    def in_domain(self, point, margin=DOMAIN_MARGIN) -> bool:
        return bool(np.all(self.margins(point) > margin))

    def require_domain(self, point):
        if not self.in_domain(point):
            raise OutOfDomainError(f"point {tuple(point)} outside chart {self.chart.name!r}")

    # -- expression jets
    def jet_program(self, key, exprs: Sequence[ex.Expr], order: int):
        """Values and partial derivatives up to ``order`` of a list of expressions.

        Returns a callable ``point -> (values, d1, d2)`` with shapes
        ``(m,)``, ``(n, m)``, ``(n, n, m)``.
        """
        def build():
            coords = self.chart.coords
            n, m = self.n, len(exprs)
            flat = list(exprs)
            d1_idx = d2_idx = None
            if order >= 1:
                d1_idx = np.empty((n, m), dtype=int)
                for c in range(n):
                    for k, e in enumerate(exprs):
                        d1_idx[c, k] = len(flat)
                        flat.append(ex.diff(e, coords[c]))
            if order >= 2:
                d2_idx = np.empty((n, n, m), dtype=int)
                for c, d in _sym_pairs(n):
                    for k in range(m):
                        d2_idx[c, d, k] = d2_idx[d, c, k] = len(flat)
                        flat.append(ex.diff(flat[d1_idx[d, k]], coords[c]))
            scatter = _Scatter(flat, self.argnames)

            def run(point):
                out = scatter(self.args(point))
                v = out[:m]
                d1 = out[d1_idx] if d1_idx is not None else None
                d2 = out[d2_idx] if d2_idx is not None else None
                return v, d1, d2
            return run
        return self._cached(("jet", key, order), build)

    def metric_jet(self, point, order=0):
        n = self.n
        pairs = _sym_pairs(n)
        run = self.jet_program("metric", [self.chart.g(i, j) for i, j in pairs], order)
        v, d1, d2 = run(point)
        idx = np.empty((n, n), dtype=int)
        for k, (i, j) in enumerate(pairs):
            idx[i, j] = idx[j, i] = k
        g = v[idx]
        dg = d1[:, idx] if d1 is not None else None
        ddg = d2[:, :, idx] if d2 is not None else None
        return g, dg, ddg

    def field_exprs(self, field) -> tuple:
        if isinstance(field, str):
            try:
                return tuple(self.chart.vectors[field])
            except KeyError:
                raise KeyError(f"chart {self.chart.name!r} has no vector field {field!r}") from None
        comps = tuple(field)
        if len(comps) != self.n:
            raise ValueError("field has wrong number of components")
        return tuple(ex.Const(c) if not isinstance(c, ex.Expr) else c for c in comps)

    def scalar_expr(self, name) -> ex.Expr:
        if isinstance(name, ex.Expr):
            return name
        try:
            return self.chart.scalars[name]
        except KeyError:
            raise KeyError(f"chart {self.chart.name!r} has no scalar field {name!r}") from None

    def field_jet(self, field, point, order=0) -> FieldJet:
        exprs = self.field_exprs(field)
        v, d1, d2 = self.jet_program(("vector", exprs), exprs, order)(point)
        return FieldJet(v, d1, d2)

    def scalar_jet(self, name, point, order=0) -> ScalarJet:
        e = self.scalar_expr(name)
        v, d1, d2 = self.jet_program(("scalar", e), [e], order)(point)
        return ScalarJet(float(v[0]), None if d1 is None else d1[:, 0],
                         None if d2 is None else d2[:, :, 0])

    def evaluate(self, exprs, point) -> np.ndarray:
        exprs = tuple(exprs)
        prog = self._cached(("eval", exprs), lambda: _Scatter(exprs, self.argnames))
        return prog(self.args(point))

    def at(self, point, check_domain=True) -> "PointGeometry":
        if check_domain:
            self.require_domain(point)
        return PointGeometry(self, tuple(float(x) for x in point))


@functools.lru_cache(maxsize=256)
def _engine(spec, chart):
    return ChartEngine(spec, chart)


def engine(spec: SpacetimeSpec, chart=None) -> ChartEngine:
    return _engine(spec, spec.chart(chart))


class PointGeometry:
    """Lazily computed metric, connection and curvature at one point."""

    def __init__(self, eng: ChartEngine, point: tuple):
        self.engine = eng
        self.point = point
        self.n = eng.n
        self._order = -1
        self._g = self._dg = self._ddg = None

    def _metric(self, order):
        if order > self._order:
            self._g, self._dg, self._ddg = self.engine.metric_jet(self.point, order)
            self._order = order

    @property
    def g(self):
        self._metric(0)
        return self._g

    @property
    def dg(self):
        self._metric(1)
        return self._dg

    @property
    def ddg(self):
        self._metric(2)
        return self._ddg

    @functools.cached_property
    def scale(self) -> float:
        return 1.0 + float(np.max(np.abs(self.g)))

    @functools.cached_property
    def ginv(self):
        g = self.g
        det = np.linalg.det(g)
        if not abs(det) >= 1e-12 * self.scale:
            raise DegenerateMetricError(f"degenerate metric at {self.point} (det={det:.3e})")
        return np.linalg.inv(g)

    @functools.cached_property
    def dginv(self):
        # d_c g^ab = -g^ap d_c g_pq g^qb
        gi = self.ginv
        return -np.einsum("ap,cpq,qb->cab", gi, self.dg, gi)

    @functools.cached_property
    def signature(self):
        w = np.linalg.eigvalsh(self.g)
        return int(np.sum(w < 0)), int(np.sum(w > 0))

    @functools.cached_property
    def gamma_lower(self):
        # Gamma_dbc = 1/2 (d_b g_dc + d_c g_bd - d_d g_bc)
        dg = self.dg
        return 0.5 * (np.einsum("bdc->dbc", dg) + np.einsum("cbd->dbc", dg) - dg)

    @functools.cached_property
    def gamma(self):
        gam = np.einsum("ad,dbc->abc", self.ginv, self.gamma_lower)
        return 0.5 * (gam + np.swapaxes(gam, 1, 2))

    @functools.cached_property
    def dgamma(self):
        ddg = self.ddg
        # d_e Gamma_dbc
        dlow = 0.5 * (np.einsum("ebdc->edbc", ddg) + np.einsum("ecbd->edbc", ddg) - ddg)
        out = (np.einsum("ead,dbc->eabc", self.dginv, self.gamma_lower)
               + np.einsum("ad,edbc->eabc", self.ginv, dlow))
        return 0.5 * (out + np.swapaxes(out, 2, 3))

    @functools.cached_property
    def riemann(self):
        dG, G = self.dgamma, self.gamma
        return (np.einsum("cadb->abcd", dG) - np.einsum("dacb->abcd", dG)
                + np.einsum("ace,edb->abcd", G, G) - np.einsum("ade,ecb->abcd", G, G))

    @functools.cached_property
    def riemann_lower(self):
        return np.einsum("ae,ebcd->abcd", self.g, self.riemann)

    @functools.cached_property
    def ricci(self):
        ric = np.einsum("abad->bd", self.riemann)
        return ric

    @functools.cached_property
    def ricci_scalar(self):
        return float(np.einsum("ab,ab->", self.ginv, self.ricci))

    def inner(self, u, v) -> float:
        return float(u @ self.g @ v)

    def lower(self, v):
        return self.g @ v

    # -- fields
    def jet(self, field, order=1) -> FieldJet:
        return self.engine.field_jet(field, self.point, order)

    def nabla(self, jet: FieldJet):
        """(nabla X)^a_b from a field jet of order >= 1."""
        return jet.d1.T + np.einsum("acb,c->ab", self.gamma, jet.value)

    def divergence(self, jet: FieldJet) -> float:
        return float(np.trace(self.nabla(jet)))


def _point_tuple(point):
    return tuple(float(x) for x in point)


# -- public operations -------------------------------------------------------


def metric_at(spec, chart, point) -> MetricValue:
    """Metric matrix, inverse and signature; verifies Lorentzian signature."""
    geo = engine(spec, chart).at(point)
    ginv = geo.ginv
    sig = geo.signature
    n = geo.n
    if spec.signature == "lorentzian" and sig != (1, n - 1):
        raise DegenerateMetricError(f"signature {sig} is not Lorentzian at {geo.point}")
    if spec.signature == "riemannian" and sig != (0, n):
        raise DegenerateMetricError(f"signature {sig} is not Riemannian at {geo.point}")
    return MetricValue(geo.point, geo.g.copy(), ginv.copy(), sig)


def christoffel_at(spec, chart, point) -> ConnectionValue:
    geo = engine(spec, chart).at(point)
    return ConnectionValue(geo.point, geo.gamma.copy())


def curvature_at(spec, chart, point) -> CurvatureValue:
    geo = engine(spec, chart).at(point)
    return CurvatureValue(geo.point, geo.riemann.copy(), geo.ricci.copy())


def ricci_scalar(spec, chart, point) -> float:
    return engine(spec, chart).at(point).ricci_scalar


def covariant_derivative_at(spec, chart, field, point, v=None) -> CovariantDerivative:
    """``(nabla X)^a_b`` and, if ``v`` is given, ``nabla_v X``."""
    geo = engine(spec, chart).at(point)
    nab = geo.nabla(geo.jet(field, 1))
    directional = None if v is None else nab @ np.asarray(v, dtype=float)
    return CovariantDerivative(geo.point, nab, directional)


def causal_classify(spec, chart, point, v) -> CausalClass:
    v = np.asarray(v, dtype=float)
    norm_sq = float(v @ v)
    if not np.sqrt(norm_sq) > 1e-12:
        raise PreconditionError("cannot classify the zero vector")
    geo = engine(spec, chart).at(point)
    value = geo.inner(v, v)
    if abs(value) <= NULL_TOL * norm_sq:
        return CausalClass("null", value)
    return CausalClass("timelike" if value < 0 else "spacelike", value)


def killing_residual(spec, chart, field, point) -> np.ndarray:
    """``(L_X g)_ab = nabla_a X_b + nabla_b X_a``."""
    geo = engine(spec, chart).at(point)
    jet = geo.jet(field, 1)
    lowered_nabla = geo.g @ geo.nabla(jet)  # nabla_b X_a as [a, b]
    return lowered_nabla + lowered_nabla.T


def metric_compatibility_residual(spec, chart, point) -> np.ndarray:
    """``nabla_c g_ab`` as an array ``[c, a, b]``; zero for Levi-Civita."""
    geo = engine(spec, chart).at(point)
    G = geo.gamma
    g = geo.g
    return (geo.dg - np.einsum("eca,eb->cab", G, g) - np.einsum("ecb,ae->cab", G, g))


def tensor_symmetry_residuals(spec, chart, point) -> dict:
    """Max-abs residuals of the algebraic symmetries of Gamma and Riemann."""
    geo = engine(spec, chart).at(point)
    G, R, Rl = geo.gamma, geo.riemann, geo.riemann_lower
    bianchi = R + np.einsum("abcd->adbc", R) + np.einsum("abcd->acdb", R)
    return {
        "gamma_symmetry": float(np.max(np.abs(G - np.swapaxes(G, 1, 2)))),
        "riemann_antisymmetry": float(np.max(np.abs(R + np.swapaxes(R, 2, 3)))),
        "bianchi": float(np.max(np.abs(bianchi))),
        "pair_symmetry": float(np.max(np.abs(Rl - np.einsum("abcd->cdab", Rl)))),
        "ricci_symmetry": float(np.max(np.abs(geo.ricci - geo.ricci.T))),
    }


def finite_difference_christoffel(spec, chart, point, h=1e-5) -> np.ndarray:
    """Christoffel symbols from central differences of the metric (test oracle)."""
    eng = engine(spec, chart)
    p = np.array(point, dtype=float)
    n = eng.n
    dg = np.empty((n, n, n))
    for c in range(n):
        e = np.zeros(n)
        e[c] = h
        gp = eng.metric_jet(p + e)[0]
        gm = eng.metric_jet(p - e)[0]
        gp2 = eng.metric_jet(p + 2 * e)[0]
        gm2 = eng.metric_jet(p - 2 * e)[0]
        dg[c] = (8 * (gp - gm) - (gp2 - gm2)) / (12 * h)
    g = eng.metric_jet(p)[0]
    low = 0.5 * (np.einsum("bdc->dbc", dg) + np.einsum("cbd->dbc", dg) - dg)
    return np.einsum("ad,dbc->abc", np.linalg.inv(g), low)
