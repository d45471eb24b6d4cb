"""Chart transitions and random sampling over an atlas."""

from __future__ import annotations

import numpy as np

from . import expr as ex
from .geometry import DOMAIN_MARGIN, engine

__all__ = [
    "overlap_holds", "map_point", "transition_jacobian", "pushforward",
    "best_handoff", "to_chart", "sample_point", "sample_points", "sample_overlap_points",
]


def _overlap_exprs(t):
    return tuple(c.margin_expr for c in t.overlap)


def overlap_holds(spec, t, point) -> bool:
    if not t.overlap:
        return True
    eng = engine(spec, t.source)
    try:
        margins = eng.evaluate(_overlap_exprs(t), point)
    except Exception:
        return False
    return bool(np.all(margins > DOMAIN_MARGIN))


def map_point(spec, t, point) -> np.ndarray:
    return engine(spec, t.source).evaluate(t.maps, point)


def transition_jacobian(spec, t, point) -> np.ndarray:
    """``J[i, j] = d(target_i) / d(source_j)``."""
    eng = engine(spec, t.source)
    v, d1, _ = eng.jet_program(("transition", t.maps), t.maps, 1)(point)
    return d1.T


def pushforward(spec, t, point, v) -> np.ndarray:
    return transition_jacobian(spec, t, point) @ np.asarray(v, dtype=float)


def best_handoff(spec, chart_name, point):
    """Transition from ``chart_name`` whose image lies deepest in its target.

    Returns ``(transition, mapped_point)`` or ``None``.
    """
    best = None
    for t in spec.transitions_from(chart_name):
        if not overlap_holds(spec, t, point):
            continue
        try:
            q = map_point(spec, t, point)
        except Exception:
            continue
        margin = float(np.min(engine(spec, t.target).margins(q)))
        if margin > DOMAIN_MARGIN and (best is None or margin > best[0]):
            best = (margin, t, q)
    return None if best is None else (best[1], best[2])


def to_chart(spec, source, target, point):
    """Coordinates of ``point`` (in ``source``) in chart ``target``, or ``None``."""
    if source == target:
        return np.asarray(point, dtype=float)
    t = spec.transition(source, target)
    if t is None or not overlap_holds(spec, t, point):
        return None
    try:
        q = map_point(spec, t, point)
    except Exception:
        return None
    return q if engine(spec, target).in_domain(q) else None


def _box(chart):
    lo, hi = [], []
    for c in chart.coords:
        a, b = chart.sample_box.get(c, (-1.0, 1.0))
        lo.append(a)
        hi.append(b)
    return np.array(lo), np.array(hi)


def sample_point(spec, chart, rng, max_tries=10000) -> np.ndarray:
    """Uniform point of the chart's sampling box, rejection-sampled in its domain."""
    ch = spec.chart(chart)
    eng = engine(spec, ch)
    lo, hi = _box(ch)
    for _ in range(max_tries):
        p = lo + (hi - lo) * rng.random(len(lo))
        if eng.in_domain(p):
            return p
    raise RuntimeError(f"could not sample a point in chart {ch.name!r}")


def sample_points(spec, n, rng, charts=None) -> list:
    """``n`` pairs ``(chart_name, point)``; charts drawn uniformly."""
    names = [c.name for c in spec.charts] if charts is None else list(charts)
    out = []
    for _ in range(n):
        name = names[int(rng.integers(len(names)))]
        out.append((name, sample_point(spec, name, rng)))
    return out


def sample_overlap_points(spec, n, rng, max_tries=200000) -> list:
    """``n`` triples ``(transition, source_point, target_point)`` on chart overlaps."""
    if not spec.transitions:
        return []
    out = []
    tries = 0
    while len(out) < n and tries < max_tries:
        tries += 1
        t = spec.transitions[int(rng.integers(len(spec.transitions)))]
        p = sample_point(spec, t.source, rng)
        if not overlap_holds(spec, t, p):
            continue
        q = map_point(spec, t, p)
        if engine(spec, t.target).in_domain(q):
            out.append((t, p, q))
    return out
