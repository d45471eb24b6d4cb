"""Null frames, optical scalars and Raychaudhuri residuals.

For a null field ``k`` with a frame ``{k, L, x, y}`` the screen deformation
matrix is ``B[i, j] = g(nabla_{e_i} k, e_j)`` for ``e_i`` in ``(x, y)``, and::

    theta    = B_xx + B_yy
    twist    = B_yx - B_xy
    shear_sq = ((B_xx - B_yy)**2 + (B_xy + B_yx)**2) / 4

Directional derivatives of the expansion and squared twist along the field
are computed exactly from metric and field jets, using the frame-free
identities ``twist**2 = F_ab F^ab / 2 + lam**2`` with ``F = d(k_flat)`` and
``nabla_k k = lam k``.  A finite-difference route is kept as a cross-check.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import FrameError, PreconditionError
from .geometry import NULL_TOL, engine

__all__ = [
    "NullFrame", "OpticalScalars", "RaychaudhuriResult", "PregeodesicResult",
    "build_null_frame", "frame_residual", "screen_matrix", "scalars_from_screen",
    "optical_scalars", "raychaudhuri_residuals", "pregeodesic_residual",
    "frobenius_value", "Congruence", "GEODESIC_TOL",
]

GEODESIC_TOL = 1e-8
FD_STEP = 1e-4


@dataclass(frozen=True)
class NullFrame:
    point: tuple
    k: np.ndarray
    L: np.ndarray
    x: np.ndarray
    y: np.ndarray

    def basis(self):
        """Frame vectors in the order (k, x, y, L)."""
        return (self.k, self.x, self.y, self.L)


@dataclass(frozen=True)
class OpticalScalars:
    theta: float
    shear_sq: float
    twist: float
    twist_sq: float
    divergence: float  # coordinate divergence nabla_a k^a


@dataclass(frozen=True)
class RaychaudhuriResult:
    r1: float
    r2: float
    method: str
    terms: dict


@dataclass(frozen=True)
class PregeodesicResult:
    r3: float
    r4: float
    lam: float
    method: str
    terms: dict


def frame_residual(g: np.ndarray, frame: NullFrame) -> float:
    """Max deviation of the frame Gram matrix from its required form."""
    vecs = [frame.k, frame.L, frame.x, frame.y]
    gram = np.array([[u @ g @ v for v in vecs] for u in vecs])
    want = np.array([[0, -1, 0, 0], [-1, 0, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]], dtype=float)
    return float(np.max(np.abs(gram - want)))


def _frame_from_metric(g, k, point, seed=None):
    n = len(k)
    if n != 4:
        raise FrameError("null frames {k, L, x, y} need a 4-dimensional chart")
    knorm = float(np.max(np.abs(k)))
    if not knorm > 1e-12:
        raise FrameError("degenerate construction: k has vanishing components")
    kk = k @ g @ k
    if abs(kk) > NULL_TOL * float(k @ k):
        raise FrameError(f"k not null (g(k,k) = {kk:.3e})")
    scale = 1.0 + float(np.max(np.abs(g)))
    basis = np.eye(n)
    if seed is not None:
        u = np.asarray(seed, dtype=float)
        if abs(k @ g @ u) <= 1e-12 * scale * knorm * float(np.max(np.abs(u))):
            raise FrameError("seed vector is orthogonal to k")
    else:
        u = None
        for e in basis:
            if abs(k @ g @ e) > 1e-8 * scale * knorm:
                u = e
                break
        if u is None:
            raise FrameError("no coordinate basis vector pairs with k")
    L = u / (-(k @ g @ u))
    L = L + 0.5 * (L @ g @ L) * k
    # second pass removes rounding in g(L, L) and g(k, L)
    L = L / (-(k @ g @ L))
    L = L + 0.5 * (L @ g @ L) * k

    def project(v):
        return v + (v @ g @ L) * k + (v @ g @ k) * L

    cands = [project(e) for e in basis]
    norms = [c @ g @ c for c in cands]
    i = int(np.argmax(norms))
    x = cands[i] / np.sqrt(norms[i])
    best, ybest = -1.0, None
    for j, c in enumerate(cands):
        if j == i:
            continue
        c = c - (c @ g @ x) * x
        nn = c @ g @ c
        if nn > best:
            best, ybest = nn, c
    if not best > 1e-20:
        raise FrameError("screen space is degenerate")
    y = ybest / np.sqrt(best)
    for _ in range(2):
        x = project(x)
        x = x / np.sqrt(x @ g @ x)
        y = project(y)
        y = y - (y @ g @ x) * x
        y = y / np.sqrt(y @ g @ y)
    if np.linalg.det(np.column_stack([k, x, y, L])) < 0:
        y = -y
    return NullFrame(tuple(point), np.array(k, dtype=float), L, x, y)


def build_null_frame(spec, chart, point, k_value, seed=None) -> NullFrame:
    """Complete a null vector ``k_value`` to a frame ``{k, L, x, y}``.

    ``L`` is fixed by ``seed`` (or by the first coordinate basis vector with
    nonzero pairing against ``k``); ``x, y`` are Gram-Schmidt projections of
    coordinate basis vectors onto the screen, oriented so that
    ``det(k, x, y, L) > 0``.
    """
    geo = engine(spec, chart).at(point)
    return _frame_from_metric(geo.g, np.asarray(k_value, dtype=float), geo.point, seed)


def screen_matrix(g, nabla, frame: NullFrame) -> np.ndarray:
    screen = (frame.x, frame.y)
    return np.array([[ej @ g @ (nabla @ ei) for ej in screen] for ei in screen])


def scalars_from_screen(B: np.ndarray, divergence: float) -> OpticalScalars:
    theta = B[0, 0] + B[1, 1]
    twist = B[1, 0] - B[0, 1]
    shear_sq = 0.25 * ((B[0, 0] - B[1, 1]) ** 2 + (B[0, 1] + B[1, 0]) ** 2)
    return OpticalScalars(float(theta), float(shear_sq), float(twist), float(twist ** 2),
                          float(divergence))


class Congruence:
    """Jets of a (pre)geodesic null field at one point."""

    def __init__(self, spec, chart, field, point, seed=None):
        self.spec = spec
        self.chart = spec.chart(chart)
        self.field = field
        self.geo = engine(spec, chart).at(point)
        self.jet = self.geo.jet(field, 2)
        self.k = self.jet.value
        self.frame = _frame_from_metric(self.geo.g, self.k, self.geo.point, seed)

    @cached_property
    def nabla(self):
        return self.geo.nabla(self.jet)

    @cached_property
    def accel(self):
        """nabla_k k."""
        return self.nabla @ self.k

    @cached_property
    def lam(self) -> float:
        return float(-(self.accel @ self.geo.g @ self.frame.L))

    @cached_property
    def pregeodesic_defect(self) -> float:
        return float(np.max(np.abs(self.accel - self.lam * self.k)))

    @cached_property
    def geodesic_defect(self) -> float:
        return float(np.max(np.abs(self.accel)))

    @cached_property
    def divergence(self) -> float:
        return float(np.trace(self.nabla))

    @cached_property
    def scalars(self) -> OpticalScalars:
        B = screen_matrix(self.geo.g, self.nabla, self.frame)
        return scalars_from_screen(B, self.divergence)

    @cached_property
    def ric_kk(self) -> float:
        return float(self.k @ self.geo.ricci @ self.k)

    # -- exact derivatives along the field
    @cached_property
    def _lowered(self):
        geo, v, d1 = self.geo, self.k, self.jet.d1
        dKl = np.einsum("abc,c->ab", geo.dg, v) + np.einsum("bc,ac->ab", geo.g, d1)
        return dKl

    @cached_property
    def F(self):
        dKl = self._lowered
        return dKl - dKl.T

    @cached_property
    def half_FF(self) -> float:
        gi = self.geo.ginv
        return float(0.5 * np.einsum("ab,ac,bd,cd->", self.F, gi, gi, self.F))

    @cached_property
    def d_half_FF(self) -> np.ndarray:
        geo, v, d1, d2 = self.geo, self.k, self.jet.d1, self.jet.d2
        dg, ddg, g, gi = geo.dg, geo.ddg, geo.g, geo.ginv
        ddKl = (np.einsum("eabc,c->eab", ddg, v) + np.einsum("abc,ec->eab", dg, d1)
                + np.einsum("ebc,ac->eab", dg, d1) + np.einsum("bc,eac->eab", g, d2))
        dF = ddKl - np.swapaxes(ddKl, 1, 2)
        Fup = gi @ self.F @ gi.T
        return (np.einsum("eab,ab->e", dF, Fup)
                + np.einsum("ab,cd,eac,bd->e", self.F, self.F, geo.dginv, gi))

    @cached_property
    def d_divergence(self) -> np.ndarray:
        geo, v, d1, d2 = self.geo, self.k, self.jet.d1, self.jet.d2
        return (np.einsum("eaa->e", d2) + np.einsum("eaab,b->e", geo.dgamma, v)
                + np.einsum("aab,eb->e", geo.gamma, d1))

    @cached_property
    def d_lam(self) -> np.ndarray:
        geo, v, d1, d2 = self.geo, self.k, self.jet.d1, self.jet.d2
        g, dg, G, dG = geo.g, geo.dg, geo.gamma, geo.dgamma
        V = self.frame.L
        A = self.accel
        dA = (np.einsum("eb,ba->ea", d1, d1) + np.einsum("b,eba->ea", v, d2)
              + np.einsum("eabc,b,c->ea", dG, v, v) + 2 * np.einsum("abc,eb,c->ea", G, d1, v))
        N = A @ g @ V
        D = v @ g @ V
        dN = np.einsum("eab,a,b->e", dg, A, V) + np.einsum("ab,ea,b->e", g, dA, V)
        dD = np.einsum("eab,a,b->e", dg, v, V) + np.einsum("ab,ea,b->e", g, d1, V)
        return (dN * D - N * dD) / D ** 2

    def along(self, grad) -> float:
        return float(self.k @ grad)

    @property
    def twist_sq_exact(self) -> float:
        return self.half_FF + self.lam ** 2


def _fd_along(spec, chart, field, point, func, step=FD_STEP):
    """Derivative of ``func(point)`` along the field: 5-point stencil + Richardson."""
    eng = engine(spec, chart)
    p = np.asarray(point, dtype=float)
    v = eng.field_jet(field, p).value
    h = step / max(1.0, float(np.max(np.abs(v))))

    def stencil(h):
        vals = [func(p + s * h * v) for s in (-2, -1, 1, 2)]
        return (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * h)

    # Richardson on the h^4 leading error; result is a derivative per unit parameter
    return (16 * stencil(h / 2) - stencil(h)) / 15


def optical_scalars(spec, chart, k_field, point, seed=None) -> OpticalScalars:
    """Expansion, squared shear and twist of ``k_field`` at ``point``."""
    c = Congruence(spec, chart, k_field, point, seed)
    if c.geodesic_defect > GEODESIC_TOL * c.geo.scale:
        warnings.warn(f"field is not geodesic at {c.geo.point} "
                      f"(|nabla_k k| = {c.geodesic_defect:.2e}); scalars are frame data only",
                      RuntimeWarning, stacklevel=2)
    return c.scalars


def raychaudhuri_residuals(spec, chart, k_field, point, method="symbolic") -> RaychaudhuriResult:
    """Residuals of the expansion and twist transport laws for a geodesic null field.

    ``r1 = k(div k) - [iota^2/2 - 2|sigma|^2 - (div k)^2/2 - Ric(k,k)]`` and
    ``r2 = k(iota^2) + 2 (div k) iota^2``.
    """
    c = Congruence(spec, chart, k_field, point)
    if c.geodesic_defect > GEODESIC_TOL * c.geo.scale:
        raise PreconditionError(f"field is not geodesic at {c.geo.point} "
                                f"(|nabla_k k| = {c.geodesic_defect:.2e})")
    s = c.scalars
    div_k = c.divergence
    if method == "symbolic":
        k_div = c.along(c.d_divergence)
        k_twist = c.along(c.d_half_FF)
    elif method == "finite_difference":
        k_div = _fd_along(spec, chart, k_field, point,
                          lambda q: Congruence(spec, chart, k_field, q).divergence)
        k_twist = _fd_along(spec, chart, k_field, point,
                            lambda q: Congruence(spec, chart, k_field, q).scalars.twist_sq)
    else:
        raise ValueError(f"unknown method {method!r}")
    rhs = s.twist_sq / 2 - 2 * s.shear_sq - div_k ** 2 / 2 - c.ric_kk
    terms = {"k_div": k_div, "k_iota2": k_twist, "div": div_k, "iota2": s.twist_sq,
             "shear_sq": s.shear_sq, "ric_kk": c.ric_kk}
    return RaychaudhuriResult(k_div - rhs, k_twist + 2 * div_k * s.twist_sq, method, terms)


def pregeodesic_residual(spec, chart, K_field, point, method="symbolic") -> PregeodesicResult:
    """Transport-law residuals for a null field with ``nabla_K K = lam K``.

    With ``psi = div K - lam``::

        r3 = K(psi) - [iota^2/2 - 2|sigma|^2 - psi^2/2 + lam psi - Ric(K,K)]
        r4 = K(iota^2) + 2 (psi - lam) iota^2
    """
    c = Congruence(spec, chart, K_field, point)
    if c.pregeodesic_defect > GEODESIC_TOL * c.geo.scale * max(1.0, abs(c.lam)):
        raise PreconditionError(f"field not pregeodesic at {c.geo.point} "
                                f"(|nabla_K K - lam K| = {c.pregeodesic_defect:.2e})")
    s, lam = c.scalars, c.lam
    psi = c.divergence - lam
    if method == "symbolic":
        K_lam = c.along(c.d_lam)
        K_psi = c.along(c.d_divergence) - K_lam
        K_twist = c.along(c.d_half_FF) + 2 * lam * K_lam
    elif method == "finite_difference":
        def psi_at(q):
            cq = Congruence(spec, chart, K_field, q)
            return cq.divergence - cq.lam
        K_psi = _fd_along(spec, chart, K_field, point, psi_at)
        K_twist = _fd_along(spec, chart, K_field, point,
                            lambda q: Congruence(spec, chart, K_field, q).scalars.twist_sq)
    else:
        raise ValueError(f"unknown method {method!r}")
    rhs = s.twist_sq / 2 - 2 * s.shear_sq - psi ** 2 / 2 + lam * psi - c.ric_kk
    terms = {"K_psi": K_psi, "K_iota2": K_twist, "psi": psi, "iota2": s.twist_sq,
             "shear_sq": s.shear_sq, "ric_KK": c.ric_kk}
    return PregeodesicResult(K_psi - rhs, K_twist + 2 * (psi - lam) * s.twist_sq, lam, method,
                             terms)


def frobenius_value(spec, chart, k_field, point, seed=None) -> float:
    """Invariant size of the 3-form ``k_flat ^ d k_flat``.

    The metric norm of this 3-form vanishes identically for null ``k``, so the
    magnitude is read off as ``|W(L, x, y)|`` in a null frame, which does not
    depend on the admissible frame chosen.
    """
    c = Congruence(spec, chart, k_field, point, seed)
    kl = c.geo.g @ c.k
    F = c.F
    W = (np.einsum("a,bc->abc", kl, F) + np.einsum("b,ca->abc", kl, F)
         + np.einsum("c,ab->abc", kl, F))
    fr = c.frame
    return float(abs(np.einsum("abc,a,b,c->", W, fr.L, fr.x, fr.y)))
