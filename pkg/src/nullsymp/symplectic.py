"""The exact 2-form ``omega = d(e^f k_flat)`` and its verification suite.

``alpha_b = e^f g_bc k^c`` is assembled symbolically per chart, so ``omega``
and ``d omega`` come from exact derivatives of the chart expressions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .errors import PreconditionError
from .geometry import engine
from .optics import _frame_from_metric, screen_matrix, scalars_from_screen

__all__ = [
    "TwoFormValue", "SymplecticReport", "ContactReport", "alpha_exprs", "omega_at",
    "frame_pairings", "nondegeneracy_report", "liouville_residual", "liouville_field",
    "closedness_residual", "lagrangian_residual", "contact_check_3d", "pfaffian4",
]


@dataclass(frozen=True)
class TwoFormValue:
    point: tuple
    components: np.ndarray  # omega_ab, antisymmetric

    def __call__(self, u, v) -> float:
        return float(u @ self.components @ v)

    @property
    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.components, tol=1e-10 * max(
            1.0, float(np.max(np.abs(self.components))))))


@dataclass(frozen=True)
class SymplecticReport:
    point: tuple
    omega_kL: float
    omega_xy: float
    omega_kx: float
    omega_ky: float
    kf: float
    f: float
    iota: float
    iota2: float
    pairing_kL_residual: float  # omega(k, L) + e^f k(f)
    pairing_xy_residual: float  # omega(x, y) + e^f iota
    pfaffian: float | None = None
    det_frame: float | None = None
    det_identity_residual: float | None = None
    det_identity_relative: float | None = None
    det_coordinate: float | None = None  # det of omega_ab itself, not compared to anything
    liouville_residual: float | None = None
    nondegenerate: bool | None = None


@dataclass(frozen=True)
class ContactReport:
    volume_factor: float
    reeb_residual_interior: float
    reeb_residual_pairing: float
    metric_volume_factor: float


def alpha_exprs(spec, chart, k_field, f_field) -> tuple:
    """Components ``alpha_b = exp(f) g_bc k^c`` as expressions."""
    eng = engine(spec, chart)
    ch = eng.chart
    k = eng.field_exprs(k_field)
    f = eng.scalar_expr(f_field)
    ef = ex.apply_func("exp", f)
    out = []
    for b in range(ch.dim):
        flat = ex.ZERO
        for c in range(ch.dim):
            flat = ex.add(flat, ex.mul(ch.g(b, c), k[c]))
        out.append(ex.mul(ef, flat))
    return tuple(out)


def _alpha_jet(spec, chart, k_field, f_field, point, order):
    eng = engine(spec, chart)
    exprs = alpha_exprs(spec, chart, k_field, f_field)
    return eng.jet_program(("alpha", exprs), exprs, order)(point)


def _omega_from_jet(d1):
    # d1[a, b] = d_a alpha_b
    return d1 - d1.T


def omega_at(spec, chart, k_field, f_field, point) -> TwoFormValue:
    """``omega_ab = d_a alpha_b - d_b alpha_a``."""
    eng = engine(spec, chart)
    eng.require_domain(point)
    _, d1, _ = _alpha_jet(spec, chart, k_field, f_field, point, 1)
    return TwoFormValue(tuple(float(x) for x in point), _omega_from_jet(d1))


def pfaffian4(W) -> float:
    return float(W[0, 1] * W[2, 3] - W[0, 2] * W[1, 3] + W[0, 3] * W[1, 2])


class _Pairing:
    def __init__(self, spec, chart, k_field, f_field, point, seed=None):
        eng = engine(spec, chart)
        self.geo = eng.at(point)
        self.jet = self.geo.jet(k_field, 1)
        self.k = self.jet.value
        self.frame = _frame_from_metric(self.geo.g, self.k, self.geo.point, seed)
        fj = eng.scalar_jet(f_field, point, 1)
        self.f = fj.value
        self.kf = float(self.k @ fj.d1)
        alpha, d1, _ = _alpha_jet(spec, chart, k_field, f_field, point, 1)
        self.alpha = alpha
        self.omega = TwoFormValue(self.geo.point, _omega_from_jet(d1))
        B = screen_matrix(self.geo.g, self.geo.nabla(self.jet), self.frame)
        self.scalars = scalars_from_screen(B, float(np.trace(self.geo.nabla(self.jet))))

    def report(self) -> SymplecticReport:
        fr, w = self.frame, self.omega
        ef = np.exp(self.f)
        kL, xy = w(fr.k, fr.L), w(fr.x, fr.y)
        return SymplecticReport(
            point=self.geo.point, omega_kL=kL, omega_xy=xy,
            omega_kx=w(fr.k, fr.x), omega_ky=w(fr.k, fr.y), kf=self.kf, f=self.f,
            iota=self.scalars.twist, iota2=self.scalars.twist_sq,
            pairing_kL_residual=kL + ef * self.kf,
            pairing_xy_residual=xy + ef * self.scalars.twist)


def frame_pairings(spec, chart, k_field, f_field, point, seed=None) -> SymplecticReport:
    """``omega`` on frame pairs, compared against ``-e^f k(f)`` and ``-e^f iota``."""
    return _Pairing(spec, chart, k_field, f_field, point, seed).report()


def nondegeneracy_report(spec, chart, k_field, f_field, point, seed=None) -> SymplecticReport:
    """Full pointwise report: pairings, Pfaffian in the frame ``(k, x, y, L)``,
    determinant identity ``det = e^{4f} k(f)^2 iota^2`` and Liouville residual."""
    p = _Pairing(spec, chart, k_field, f_field, point, seed)
    base = p.report()
    E = np.column_stack(p.frame.basis())
    W = E.T @ p.omega.components @ E
    pf = pfaffian4(W)
    det = float(np.linalg.det(W))
    predicted = np.exp(4 * p.f) * p.kf ** 2 * p.scalars.twist_sq
    resid = det - predicted
    rel = abs(resid) / max(abs(det), abs(predicted), np.finfo(float).tiny)
    liou = None
    if abs(p.kf) > 1e-10:
        liou = float(np.max(np.abs((p.k / p.kf) @ p.omega.components - p.alpha)))
    nondeg = abs(pf) > 1e-10 * np.exp(2 * p.f)
    return SymplecticReport(**{**base.__dict__, "pfaffian": pf, "det_frame": det,
                               "det_identity_residual": float(resid),
                               "det_identity_relative": float(rel),
                               "det_coordinate": float(np.linalg.det(p.omega.components)),
                               "liouville_residual": liou, "nondegenerate": bool(nondeg)})


def liouville_residual(spec, chart, k_field, f_field, point, raw_field=False) -> float:
    """Max-abs of ``X _| omega - alpha`` with ``X = k / k(f)``.

    With ``raw_field=True`` the unnormalised ``X = k`` is used instead.
    """
    eng = engine(spec, chart)
    eng.require_domain(point)
    k = eng.field_jet(k_field, point).value
    fj = eng.scalar_jet(f_field, point, 1)
    kf = float(k @ fj.d1)
    alpha, d1, _ = _alpha_jet(spec, chart, k_field, f_field, point, 1)
    if raw_field:
        X = k
    else:
        if not abs(kf) > 1e-10:
            raise PreconditionError(f"k(f) vanishes at {tuple(point)} (k(f) = {kf:.3e})")
        X = k / kf
    return float(np.max(np.abs(X @ _omega_from_jet(d1) - alpha)))


def liouville_field(spec, k_field, f_field) -> dict:
    """Per-chart expressions of ``X = k / k(f)``, usable as a flow field."""
    out = {}
    for chart in spec.charts:
        if isinstance(k_field, str) and k_field not in chart.vectors:
            continue
        eng = engine(spec, chart)
        k = eng.field_exprs(k_field)
        f = eng.scalar_expr(f_field)
        kf = ex.ZERO
        for c, comp in zip(chart.coords, k):
            kf = ex.add(kf, ex.mul(comp, ex.diff(f, c)))
        out[chart.name] = tuple(ex.div(comp, kf) for comp in k)
    return out


def closedness_residual(spec, chart, k_field, f_field, point, corrupt_alpha=False) -> float:
    """Max-abs of ``(d omega)_abc = d_a omega_bc + d_b omega_ca + d_c omega_ab``.

    ``corrupt_alpha`` is a mutation hook that drops the product rule, taking
    ``omega = e^f d(k_flat)``.  That 2-form is not closed wherever
    ``df ^ d(k_flat)`` is nonzero, so the check must then fail.
    """
    eng = engine(spec, chart)
    eng.require_domain(point)
    if corrupt_alpha:
        flat = alpha_exprs(spec, chart, k_field, ex.ZERO)
        _, d1, dd = eng.jet_program(("alpha", flat), flat, 2)(point)
        fj = eng.scalar_jet(f_field, point, 1)
        F = d1 - d1.T
        dF = dd - np.swapaxes(dd, 1, 2)
        dw = np.exp(fj.value) * (dF + fj.d1[:, None, None] * F[None])
    else:
        _, _, dd = _alpha_jet(spec, chart, k_field, f_field, point, 2)
        dw = dd - np.swapaxes(dd, 1, 2)  # dw[c, a, b] = d_c omega_ab
    cyc = dw + np.einsum("bca->abc", dw) + np.einsum("cab->abc", dw)
    return float(np.max(np.abs(cyc)))


def lagrangian_residual(spec, chart, k_field, f_field, point, v) -> float:
    """``|omega(k, v)|`` for spacelike ``v`` orthogonal to ``k``."""
    geo = engine(spec, chart).at(point)
    k = geo.jet(k_field, 0).value
    v = np.asarray(v, dtype=float)
    scale = geo.scale * float(np.max(np.abs(k))) * float(np.max(np.abs(v)))
    if abs(geo.inner(k, v)) >= 1e-10 * max(1.0, scale):
        raise PreconditionError("v is not orthogonal to k")
    if not geo.inner(v, v) > 0:
        raise PreconditionError("v is not spacelike")
    w = omega_at(spec, chart, k_field, f_field, point)
    return abs(w(k, v))


def contact_check_3d(spec3, chart, k_field, point) -> ContactReport:
    """Contact and Reeb conditions for ``theta = -g(k, .)`` on a 3-manifold."""
    if spec3.dim != 3:
        raise PreconditionError(f"contact check needs dimension 3, got {spec3.dim}")
    eng = engine(spec3, chart)
    geo = eng.at(point)
    ch = eng.chart
    k_exprs = eng.field_exprs(k_field)
    theta = []
    for b in range(3):
        acc = ex.ZERO
        for c in range(3):
            acc = ex.add(acc, ex.mul(ch.g(b, c), k_exprs[c]))
        theta.append(ex.neg(acc))
    theta = tuple(theta)
    th, d1, _ = eng.jet_program(("theta", theta), theta, 1)(point)
    k = eng.field_jet(k_field, point).value
    kk = geo.inner(k, k)
    if abs(kk + 1) > 1e-8:
        raise PreconditionError(f"k is not unit timelike (g(k,k) = {kk:.6g})")
    dtheta = d1 - d1.T  # dtheta[a, b] = d_a theta_b - d_b theta_a
    vol = th[0] * dtheta[1, 2] + th[1] * dtheta[2, 0] + th[2] * dtheta[0, 1]
    return ContactReport(
        volume_factor=float(vol),
        reeb_residual_interior=float(np.max(np.abs(k @ dtheta))),
        reeb_residual_pairing=float(abs(th @ k - 1)),
        metric_volume_factor=float(vol / np.sqrt(abs(np.linalg.det(geo.g)))))
