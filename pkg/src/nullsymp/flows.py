"""Integral curves of vector fields across a chart atlas.

The integrator is a Dormand-Prince 5(4) pair with a mixed absolute/relative
error norm.  Chart boundaries, terminal events and first returns are located
by bisection on the step length: a trial step of length ``tau`` from the
accepted state is recomputed for each bisection probe, which keeps the
located point at full fifth-order accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import atlas
from .errors import EvaluationError, OutOfDomainError, PreconditionError
from .geometry import DOMAIN_MARGIN, engine

__all__ = [
    "CurveSample", "FlowResult", "integrate_flow", "monitor_along", "completeness_probe",
    "closed_orbit_detect", "flow_jacobian", "integrate_geodesic", "field_overlap_residual",
    "TERMINATIONS",
]

TERMINATIONS = ("reached_smax", "left_atlas", "singular_event", "step_underflow", "closed_orbit")
HANDOFF_MARGIN = 1e-8
EVENT_TOL = 1e-10
PROBE_LABEL = "PROBE: numerical integration cannot certify completeness"

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass
class CurveSample:
    s: float
    chart: str
    point: tuple
    monitors: dict = field(default_factory=dict)


@dataclass
class FlowResult:
    samples: list
    reason: str
    period: float | None = None
    detail: dict = field(default_factory=dict)

    @property
    def final(self) -> CurveSample:
        return self.samples[-1]

    def record(self) -> dict:
        out = {"reason": self.reason, "s_final": self.final.s, "chart_final": self.final.chart,
               "point_final": list(self.final.point), "samples": len(self.samples)}
        if self.period is not None:
            out["period"] = self.period
        out.update({k: v for k, v in self.detail.items() if k != "transport_residual"})
        return out


class _Field:
    """Per-chart evaluator of a vector field given by name or expressions."""

    def __init__(self, spec, field):
        self.spec = spec
        self.field = field
        self.calls = 0

    def exprs(self, chart):
        if isinstance(self.field, Mapping):
            if chart not in self.field:
                raise PreconditionError(f"field not declared on chart {chart!r}")
            return tuple(self.field[chart])
        return engine(self.spec, chart).field_exprs(self.field)

    def __call__(self, chart, y):
        self.calls += 1
        v = engine(self.spec, chart).evaluate(self.exprs(chart), y)
        if not np.all(np.isfinite(v)):
            raise EvaluationError("non-finite field value")
        return v


def _dopri_step(f, chart, y, h):
    """One step from ``y``: fifth-order solution and error estimate."""
    ks = []
    for i in range(7):
        yi = y.copy()
        for j, a in enumerate(_A[i]):
            if a:
                yi = yi + h * a * ks[j]
        if i == 6:
            y5 = yi
        ks.append(f(chart, yi))
    K = np.array(ks)
    err = h * (_E @ K)
    return y5, err, K


def _bisect(pred, lo, hi, tol=EVENT_TOL):
    """Largest ``tau`` (to ``tol``) with ``pred`` false; ``pred(lo)`` false, ``pred(hi)`` true."""
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return lo, hi


def integrate_flow(spec, start_chart, p0, field, s_range, tol=1e-10, events=True,
                   s_eval=None, closed_orbit=None, max_steps=200000, h0=None,
                   event_tol=EVENT_TOL) -> FlowResult:
    """Integrate ``dp/ds = field(p)`` over ``s_range = (s0, s1)``; ``s1 < s0`` runs backward.

    ``events=True`` uses every event declared on the current chart; a mapping
    ``name -> None`` restricts to those names and ``False`` disables events.
    ``closed_orbit`` (a dict with ``return_tol`` and ``arm_distance``) turns on
    first-return detection in the start chart.  ``s_eval`` requests samples at
    given parameters instead of at every accepted step.
    """
    chart = spec.chart(start_chart).name
    y = np.asarray(p0, dtype=float)
    engine(spec, chart).require_domain(y)
    f = _Field(spec, field)
    s0, s1 = float(s_range[0]), float(s_range[1])
    direction = 1.0 if s1 >= s0 else -1.0
    span = abs(s1 - s0)
    f(chart, y)
    samples = [CurveSample(s0, chart, tuple(y))]
    pending = None
    if s_eval is not None:
        pending = sorted((float(s) for s in s_eval), key=lambda s: direction * s)
        pending = [s for s in pending if direction * (s - s0) > 0]

    def event_funcs(ch):
        if events is False:
            return {}
        evs = spec.chart(ch).events
        if isinstance(events, Mapping):
            evs = {k: v for k, v in evs.items() if k in events}
        return evs

    def event_values(ch, yy):
        evs = event_funcs(ch)
        if not evs:
            return np.array([])
        return engine(spec, ch).evaluate(tuple(evs.values()), yy)

    def event_jets(ch, yy):
        evs = event_funcs(ch)
        if not evs:
            return None
        exprs = tuple(evs.values())
        v, d1, _ = engine(spec, ch).jet_program(("event", exprs), exprs, 1)(yy)
        return v, d1

    orbit = None
    if closed_orbit is not None:
        # p0 and the section normal in every chart that covers p0, so the
        # return is seen even when p0 sits near the edge of its own chart
        reps = {}
        for ch in spec.charts:
            q = atlas.to_chart(spec, chart, ch.name, y)
            if q is not None:
                v = f(ch.name, q)
                reps[ch.name] = (q, v / np.linalg.norm(v))
        orbit = {"chart": chart, "reps": reps,
                 "return_tol": closed_orbit.get("return_tol", 1e-6),
                 "arm": closed_orbit.get("arm_distance", 1e-2), "armed": False}

    def orbit_offset(ch, yy):
        """``(offset from p0, section normal)`` in chart ``ch`` or the start chart."""
        if ch in orbit["reps"]:
            p0c, v0c = orbit["reps"][ch]
            return yy - p0c, v0c
        q = atlas.to_chart(spec, ch, orbit["chart"], yy)
        if q is None:
            return None
        p0c, v0c = orbit["reps"][orbit["chart"]]
        return q - p0c, v0c

    s = s0
    h = h0 if h0 is not None else min(max(span, 1e-3) * 1e-2, 1e-1)
    h_min = 1e-14 * max(1.0, abs(s0), abs(s1))
    steps = cuts = 0
    handoffs = []
    detail = {}

    def finish(reason, **extra):
        detail.update(extra)
        detail["handoffs"] = len(handoffs)
        detail["steps"] = steps
        return FlowResult(samples, reason, detail.get("period"), detail)

    while True:
        remaining = direction * (s1 - s)
        if remaining <= 1e-15 * max(1.0, abs(s1)):
            if samples[-1].s != s:
                samples.append(CurveSample(s, chart, tuple(y)))
            return finish("reached_smax")
        if steps >= max_steps:
            return finish("step_underflow", cause="max_steps")
        h = min(h, remaining)
        last = h >= remaining
        try:
            y_new, err, stages = _dopri_step(f, chart, y, direction * h)
            scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
            err_norm = float(np.max(np.abs(err) / scale))
            if not np.isfinite(err_norm):
                raise EvaluationError("non-finite step")
        except (EvaluationError, OutOfDomainError, ZeroDivisionError, OverflowError, ValueError):
            err_norm = math.inf
            y_new = None
        if err_norm > 1.0:
            h *= 0.25 if not np.isfinite(err_norm) else max(0.2, 0.9 * err_norm ** -0.2)
            if h < h_min:
                samples.append(CurveSample(s, chart, tuple(y)))
                return finish("step_underflow", cause="step size below minimum")
            continue
        if cuts < 8:
            u = _event_dip(event_jets, chart, y, y_new, stages[0], stages[6], direction * h)
            if u is not None and u * h > event_tol:
                h *= u
                cuts += 1
                continue
        cuts = 0
        steps += 1
        h_next = h * (5.0 if err_norm == 0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2)))
        if last:
            h_step = remaining
            s_new = s1
        else:
            h_step = h
            s_new = s + direction * h

        def state(tau):
            if tau == h_step:
                return y_new
            return _dopri_step(f, chart, y, direction * tau)[0]

        eng = engine(spec, chart)
        candidates = []  # (tau_lo, tau_hi, kind, name); events win ties
        ev0, ev1 = event_values(chart, y), None
        if ev0.size:
            try:
                ev1 = event_values(chart, y_new)
            except Exception:
                ev1 = np.full_like(ev0, -np.inf)
            names = list(event_funcs(chart))
            for i in np.nonzero((ev0 > 0) & ~(ev1 > 0))[0]:
                pred = lambda tau, i=i: not _event_positive(event_values, chart, state(tau), i)
                lo, hi = _bisect(pred, 0.0, h_step, event_tol)
                candidates.append((lo, hi, 0, names[i]))
        if not eng.in_domain(y_new, HANDOFF_MARGIN):
            pred = lambda tau: not eng.in_domain(state(tau), HANDOFF_MARGIN)
            lo, hi = _bisect(pred, 0.0, h_step, event_tol)
            candidates.append((lo, hi, 1, "domain"))
        if orbit is not None:
            off0, off1 = orbit_offset(chart, y), orbit_offset(chart, y_new)
            if off1 is not None and np.linalg.norm(off1[0]) > orbit["arm"]:
                orbit["armed"] = True
            if (orbit["armed"] and off0 is not None and off1 is not None
                    and off0[1] is off1[1] and off0[0] @ off0[1] < 0 <= off1[0] @ off1[1]):
                def pred(tau):
                    off = orbit_offset(chart, state(tau))
                    return off is not None and off[0] @ off[1] >= 0
                lo, hi = _bisect(pred, 0.0, h_step, event_tol)
                candidates.append((lo, hi, 2, "section"))

        stop = None
        if candidates:
            candidates.sort(key=lambda c: (c[0], c[2]))
            stop = candidates[0]
            if stop[2] == 2:
                y_sec = state(stop[1])
                dist = float(np.linalg.norm(orbit_offset(chart, y_sec)[0]))
                if dist < orbit["return_tol"]:
                    s_sec = s + direction * stop[1]
                    _flush(pending, samples, s, s_sec, direction, chart, state)
                    samples.append(CurveSample(s_sec, chart, tuple(y_sec)))
                    return finish("closed_orbit", period=abs(s_sec - s0), return_distance=dist)
                # transversal crossing far from p0: keep going
                stop = next((c for c in candidates if c[2] != 2), None)

        if stop is not None and stop[2] == 0:
            s_hit = s + direction * stop[1]
            y_hit = state(stop[1])
            _flush(pending, samples, s, s_hit, direction, chart, state)
            samples.append(CurveSample(s_hit, chart, tuple(y_hit)))
            return finish("singular_event", event=stop[3])
        if stop is not None and stop[2] == 1:
            tau = stop[0]
            s_b = s + direction * tau
            y_b = state(tau) if tau > 0 else y
            _flush(pending, samples, s, s_b, direction, chart, state)
            hand = atlas.best_handoff(spec, chart, y_b)
            if hand is None:
                hit = _event_lookahead(f, chart, y_b, direction, h_step,
                                       event_values, event_jets, event_funcs, event_tol)
                if hit is not None:
                    tau_e, y_e, name = hit
                    samples.append(CurveSample(s_b + direction * tau_e, chart, tuple(y_e)))
                    return finish("singular_event", event=name, beyond_domain=True)
                samples.append(CurveSample(s_b, chart, tuple(y_b)))
                return finish("left_atlas")
            t, q = hand
            if samples[-1].s == s_b:
                samples.pop()
            handoffs.append((s_b, chart, t.target))
            chart, y, s = t.target, q, s_b
            samples.append(CurveSample(s, chart, tuple(y)))
            h = max(h_next if tau == h_step else h, 1e-6)
            continue

        if pending is None:
            samples.append(CurveSample(s_new, chart, tuple(y_new)))
        else:
            _flush(pending, samples, s, s_new, direction, chart, state, h_step)
        s, y, h = s_new, y_new, h_next


def _event_dip(event_jets, chart, y0, y1, f0, f1, H):
    """Fraction ``u`` of the step at which an event's cubic Hermite model dips
    to or below zero although both endpoint values are positive.

    Catches thin excursions such as the equatorial Kerr ring (``rho2 = r^2``),
    which a plain sign test steps over.
    """
    try:
        j0, j1 = event_jets(chart, y0), event_jets(chart, y1)
    except Exception:
        return None
    if j0 is None:
        return None
    best = None
    for i in range(len(j0[0])):
        g0, g1 = float(j0[0][i]), float(j1[0][i])
        if not (g0 > 0 and g1 > 0):
            continue
        d0, d1 = H * float(f0 @ j0[1][:, i]), H * float(f1 @ j1[1][:, i])
        # p(u) = a u^3 + b u^2 + d0 u + g0
        a = 2 * g0 + d0 - 2 * g1 + d1
        b = -3 * g0 - 2 * d0 + 3 * g1 - d1
        roots = np.roots([3 * a, 2 * b, d0]) if abs(a) + abs(b) > 0 else []
        for u in roots:
            if abs(u.imag) > 1e-12 or not 0 < u.real < 1:
                continue
            u = u.real
            if a * u ** 3 + b * u ** 2 + d0 * u + g0 <= 0 and (best is None or u < best):
                best = u
    return best


def _event_positive(event_values, chart, y, i):
    try:
        return bool(event_values(chart, y)[i] > 0)
    except Exception:
        return False


def _event_lookahead(f, chart, y_b, direction, h_max, event_values, event_jets,
                     event_funcs, tol):
    """Event crossing just past a domain boundary.

    Covers events whose zero set coincides with the domain boundary (the
    Kerr ring predicate); the field is evaluated just outside the domain.
    The trial step is twice the linear estimate of the time to the event.
    """
    jets = event_jets(chart, y_b)
    if jets is None:
        return None
    ev0 = jets[0]
    try:
        rate = direction * (f(chart, y_b) @ jets[1])
    except Exception:
        return None
    falling = (ev0 > 0) & (rate < 0)
    if not falling.any():
        return None
    h = direction * min(h_max, max(float(np.max(2 * ev0[falling] / -rate[falling])), 10 * tol))
    try:
        y1 = _dopri_step(f, chart, y_b, h)[0]
        ev1 = event_values(chart, y1)
    except Exception:
        return None
    names = list(event_funcs(chart))
    best = None
    for i in np.nonzero((ev0 > 0) & ~(ev1 > 0))[0]:
        def pred(tau, i=i):
            try:
                return not _event_positive(event_values, chart,
                                           _dopri_step(f, chart, y_b, np.sign(h) * tau)[0], i)
            except Exception:
                return True
        _, hi = _bisect(pred, 0.0, abs(h), tol)
        if best is None or hi < best[0]:
            best = (hi, i)
    if best is None:
        return None
    tau = best[0]
    return tau, _dopri_step(f, chart, y_b, np.sign(h) * tau)[0], names[best[1]]


def _flush(pending, samples, s, s_stop, direction, chart, state, h_step=None):
    """Emit requested samples in ``(s, s_stop]``."""
    if pending is None:
        return
    while pending and direction * (pending[0] - s_stop) <= 1e-14 * max(1.0, abs(s_stop)):
        se = pending.pop(0)
        tau = direction * (se - s)
        if h_step is not None and abs(se - s_stop) <= 1e-14 * max(1.0, abs(s_stop)):
            tau = h_step
        samples.append(CurveSample(se, chart, tuple(state(tau))))


# -- monitors ------------------------------------------------------------------


def _derivative(s, v, width=7):
    """First derivative from local polynomial interpolation on ``width`` nodes."""
    n = len(s)
    width = min(width, n)
    d = np.empty(n)
    for i in range(n):
        lo = min(max(i - width // 2, 0), n - width)
        nodes = s[lo:lo + width] - s[i]
        # weights w with sum_j w_j nodes_j^k = delta_{k1}
        V = np.vander(nodes, width, increasing=True).T
        rhs = np.zeros(width)
        rhs[1] = 1.0
        d[i] = np.linalg.solve(V, rhs) @ v[lo:lo + width]
    return d


def _rho2(spec, chart, point):
    defs = spec.chart(chart).defs
    if "rho2" not in defs:
        return None
    return float(engine(spec, chart).evaluate((defs["rho2"],), point)[0])


def monitor_along(spec, flow_result: FlowResult, k_field, f_field=None) -> FlowResult:
    """Attach optical monitors to every sample and a transport residual.

    The transport residual is ``d(iota^2)/ds + 2 theta iota^2`` with the
    derivative taken numerically along the samples (seven-point local
    interpolation within each chart segment).
    """
    from .optics import Congruence, raychaudhuri_residuals

    for smp in flow_result.samples:
        mon = {}
        missing = {}
        try:
            cong = Congruence(spec, smp.chart, k_field, smp.point)
            sc = cong.scalars
            mon["iota2"], mon["theta"] = sc.twist_sq, sc.theta
            mon["ric_kk"] = cong.ric_kk
        except Exception as e:  # noqa: BLE001 - recorded, not raised
            missing["optics"] = f"{type(e).__name__}: {e}"
            mon["iota2"] = mon["theta"] = mon["ric_kk"] = None
        try:
            rr = raychaudhuri_residuals(spec, smp.chart, k_field, smp.point)
            mon["r1"], mon["r2"] = rr.r1, rr.r2
        except Exception as e:  # noqa: BLE001
            missing["raychaudhuri"] = f"{type(e).__name__}: {e}"
            mon["r1"] = mon["r2"] = None
        mon["rho2"] = _rho2(spec, smp.chart, smp.point)
        if f_field is not None:
            try:
                eng = engine(spec, smp.chart)
                k = eng.field_jet(k_field, smp.point).value
                mon["kf"] = float(k @ eng.scalar_jet(f_field, smp.point, 1).d1)
            except Exception as e:  # noqa: BLE001
                missing["kf"] = f"{type(e).__name__}: {e}"
                mon["kf"] = None
        if missing:
            mon["missing"] = missing
        smp.monitors = mon

    # transport residual over maximal runs of usable samples in one chart
    resid = [None] * len(flow_result.samples)
    runs, cur = [], []
    for i, smp in enumerate(flow_result.samples):
        ok = smp.monitors.get("iota2") is not None and smp.monitors.get("theta") is not None
        if ok and (not cur or (flow_result.samples[cur[-1]].chart == smp.chart
                               and smp.s != flow_result.samples[cur[-1]].s)):
            cur.append(i)
        else:
            if cur:
                runs.append(cur)
            cur = [i] if ok else []
    if cur:
        runs.append(cur)
    for run in runs:
        if len(run) < 3:
            continue
        s = np.array([flow_result.samples[i].s for i in run])
        v = np.array([flow_result.samples[i].monitors["iota2"] for i in run])
        th = np.array([flow_result.samples[i].monitors["theta"] for i in run])
        d = _derivative(s, v)
        for i, r in zip(run, d + 2 * th * v):
            resid[i] = float(r)
    for smp, r in zip(flow_result.samples, resid):
        smp.monitors["transport"] = r
    flow_result.detail["transport_residual"] = resid
    return flow_result


# -- probes ------------------------------------------------------------------


def _probe_one(spec, chart, p0, field, s_end, tol):
    res = integrate_flow(spec, chart, p0, field, (0.0, s_end), tol=tol)
    s = res.final.s
    if res.reason == "reached_smax":
        return {"verdict": "no_obstruction_up_to_S", "s": s}
    if res.reason == "singular_event":
        return {"verdict": "singular_at_s", "s": s, "event": res.detail.get("event")}
    if res.reason == "left_atlas":
        return {"verdict": "left_atlas_at_s", "s": s}
    return {"verdict": "singular_at_s", "s": s, "cause": res.reason}


def completeness_probe(spec, p0, field, S_max, tol=1e-10, chart=None) -> dict:
    """Integrate both ways up to ``|s| = S_max`` and report what stopped each run."""
    chart = spec.chart(chart).name
    return {
        "label": PROBE_LABEL,
        "S_max": float(S_max),
        "forward": _probe_one(spec, chart, p0, field, float(S_max), tol),
        "backward": _probe_one(spec, chart, p0, field, -float(S_max), tol),
    }


def closed_orbit_detect(spec, p0, field, S_max, tol=1e-10, chart=None,
                        return_tol=1e-6, arm_distance=1e-2):
    """Period of the first return to ``p0`` within ``S_max``, or ``None``."""
    chart = spec.chart(chart).name
    res = integrate_flow(spec, chart, p0, field, (0.0, float(S_max)), tol=tol,
                         closed_orbit={"return_tol": return_tol, "arm_distance": arm_distance})
    return res.period if res.reason == "closed_orbit" else None


# -- variational flow and geodesic oracle ----------------------------------------


def flow_jacobian(spec, chart, p0, field, s, tol=1e-11):
    """Endpoint and ``d(phi_s)/dp`` at ``p0`` from the variational equation.

    Single chart only; the curve must stay in the chart for the whole run.
    """
    eng = engine(spec, chart)
    exprs = _Field(spec, field).exprs(spec.chart(chart).name)
    prog = eng.jet_program(("vector", exprs), exprs, 1)
    n = eng.n

    def rhs(ch, z):
        y = z[:n]
        J = z[n:].reshape(n, n)
        v, d1, _ = prog(y)
        if not np.all(np.isfinite(v)):
            raise EvaluationError("non-finite field value")
        return np.concatenate([v, (d1.T @ J).ravel()])

    z0 = np.concatenate([np.asarray(p0, dtype=float), np.eye(n).ravel()])
    step_field = rhs
    zc, ss, h = z0, 0.0, min(abs(s), 1e-2)
    sign = 1.0 if s >= 0 else -1.0
    while sign * (s - ss) > 1e-15:
        h = min(h, abs(s - ss))
        z_new, err, _ = _dopri_step(step_field, chart, zc, sign * h)
        e = float(np.max(np.abs(err) / (tol * (1 + np.abs(z_new)))))
        if e <= 1:
            zc, ss = z_new, ss + sign * h
            if not eng.in_domain(zc[:n]):
                raise OutOfDomainError("variational flow left the chart")
        h *= min(5.0, max(0.2, 0.9 * (e if e > 0 else 1e-10) ** -0.2))
        if h < 1e-14:
            raise EvaluationError("step underflow in variational flow")
    return zc[:n], zc[n:].reshape(n, n)


def integrate_geodesic(spec, chart, x0, v0, s_span, rtol=1e-12, atol=1e-12, s_eval=None):
    """Second-order geodesic equation via scipy's DOP853 (independent oracle)."""
    from scipy.integrate import solve_ivp

    eng = engine(spec, chart)
    n = eng.n

    def rhs(_s, z):
        x, v = z[:n], z[n:]
        gamma = eng.at(x, check_domain=False).gamma
        return np.concatenate([v, -np.einsum("abc,b,c->a", gamma, v, v)])

    sol = solve_ivp(rhs, s_span, np.concatenate([x0, v0]), method="DOP853",
                    rtol=rtol, atol=atol, t_eval=s_eval)
    if not sol.success:
        raise EvaluationError(sol.message)
    return sol.t, sol.y[:n].T, sol.y[n:].T


def field_overlap_residual(spec, field, n=50, rng=None) -> tuple:
    """Max-abs mismatch of pushed-forward field values at sampled overlap points.

    Returns ``(residual, worst)`` where ``worst`` is ``(source, target, point)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    f = _Field(spec, field)
    worst, where = 0.0, None
    for t, p, q in atlas.sample_overlap_points(spec, n, rng):
        diff = atlas.pushforward(spec, t, p, f(t.source, p)) - f(t.target, q)
        d = float(np.max(np.abs(diff)))
        if d >= worst:
            worst, where = d, (t.source, t.target, tuple(p))
    return worst, where
