import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nullsymp import atlas
from nullsymp.catalog import get_spacetime
from nullsymp.dsl import parse_spacetime
from nullsymp.errors import FrameError, PreconditionError
from nullsymp.geometry import engine
from nullsymp.optics import (
    Congruence, NullFrame, build_null_frame, frame_residual, frobenius_value, optical_scalars,
    pregeodesic_residual, raychaudhuri_residuals, scalars_from_screen, screen_matrix,
)

from oracles import kerr_twist_sq

KERR = get_spacetime("kerr_fast").spec
RS3 = get_spacetime("r_x_s3").spec
FLAT = get_spacetime("minkowski_cartesian").spec
SPH = get_spacetime("minkowski_spherical").spec
P45 = (0.0, 1.0, math.pi / 4, 0.0)

KERR_EXTRA = parse_spacetime(get_spacetime("kerr_fast").entry.source().replace(
    "  scalar f = r\n",
    "  scalar f = r\n  vector k2 = ( 2*(r^2 + a^2)/Delta , 2 , 0 , 2*a/Delta )\n"))

# null everywhere, but nabla_k k = sin(y) (0, -sin y, cos y, 0) is not parallel to k
SWIRL = parse_spacetime("""\
spacetime swirl
dim 4
chart c
  coords t x y z
  g tt = -1
  g xx = 1
  g yy = 1
  g zz = 1
  vector k = ( 1 , cos(y) , sin(y) , 0 )
""")


def _kerr_points(n, seed):
    return atlas.sample_points(KERR, n, np.random.default_rng(seed))


def test_minkowski_frame():
    fr = build_null_frame(FLAT, "cart", (0, 0, 0, 0), (1, 1, 0, 0))
    assert np.allclose(fr.L, [0.5, -0.5, 0, 0])
    g = np.diag([-1.0, 1, 1, 1])
    assert frame_residual(g, fr) == 0.0
    # the screen is span{d_y, d_z}
    assert abs(np.linalg.det(np.array([fr.x[2:], fr.y[2:]]))) == pytest.approx(1.0)
    assert not np.any(fr.x[:2]) and not np.any(fr.y[:2])


def test_kerr_frame_pairings():
    geo = engine(KERR, "bl").at(P45)
    fr = build_null_frame(KERR, "bl", P45, geo.jet("k", 0).value)
    assert frame_residual(geo.g, fr) < 1e-10
    assert np.linalg.det(np.column_stack(fr.basis())) > 0


def test_frame_errors():
    with pytest.raises(FrameError, match="k not null"):
        build_null_frame(FLAT, "cart", (0, 0, 0, 0), (1, 0, 0, 0))
    with pytest.raises(FrameError, match="degenerate"):
        build_null_frame(FLAT, "cart", (0, 0, 0, 0), (1e-13, 1e-13, 0, 0))


def test_flat_parallel_field_has_no_optics():
    s = optical_scalars(FLAT, "cart", "k", (0.1, 0.2, 0.3, 0.4))
    assert (s.theta, s.shear_sq, s.twist) == (0.0, 0.0, 0.0)
    r = raychaudhuri_residuals(FLAT, "cart", "k", (0.1, 0.2, 0.3, 0.4))
    assert r.r1 == 0.0 and r.r2 == 0.0


@pytest.mark.parametrize("r", [0.5, 1.0, 3.7])
def test_spherical_expansion(r):
    s = optical_scalars(SPH, "sph", "k", (0.0, r, 1.1, 0.4))
    assert s.theta == pytest.approx(2 / r, abs=1e-12)
    assert abs(s.shear_sq) < 1e-14 and abs(s.twist) < 1e-14


def test_kerr_twist_at_45_degrees():
    assert optical_scalars(KERR, "bl", "k", P45).twist_sq == pytest.approx(8 / 9, abs=1e-8)


def test_kerr_twist_closed_form_on_grid():
    worst = 0.0
    for r in np.linspace(0.5, 5, 20):
        for th in np.linspace(0.05, 1.5, 20):
            got = optical_scalars(KERR, "bl", "k", (0.0, r, th, 0.0)).twist_sq
            want = kerr_twist_sq(r, th)
            worst = max(worst, abs(got - want) / want)
    assert worst < 1e-7


def test_raychaudhuri_on_kerr():
    for ch, p in _kerr_points(100, 21):
        r = raychaudhuri_residuals(KERR, ch, "k", p)
        assert abs(r.r1) < 1e-7 and abs(r.r2) < 1e-7


def test_symbolic_and_finite_difference_transport_agree():
    for ch, p in _kerr_points(5, 22):
        a = raychaudhuri_residuals(KERR, ch, "k", p)
        b = raychaudhuri_residuals(KERR, ch, "k", p, method="finite_difference")
        assert b.method == "finite_difference"
        for key in ("k_div", "k_iota2"):
            assert a.terms[key] == pytest.approx(b.terms[key], rel=1e-6, abs=1e-8)


def test_rs3_twist_forced_by_ricci():
    for ch, p in atlas.sample_points(RS3, 20, np.random.default_rng(23)):
        c = Congruence(RS3, ch, "k", p)
        assert abs(c.scalars.theta) < 1e-12 and abs(c.scalars.shear_sq) < 1e-12
        # r1 = 0 with theta = sigma = 0 leaves iota^2 = 2 Ric(k, k)
        assert c.ric_kk == pytest.approx(2.0, abs=1e-8)
        assert c.scalars.twist_sq == pytest.approx(4.0, abs=1e-8)
        r = raychaudhuri_residuals(RS3, ch, "k", p)
        assert abs(r.r1) < 1e-8 and abs(r.r2) < 1e-8


def test_pregeodesic_exponential_rescale():
    for ch, p in _kerr_points(50, 24):
        res = pregeodesic_residual(KERR, ch, "K", p)
        assert abs(res.r3) < 1e-7 and abs(res.r4) < 1e-7
        assert res.lam == pytest.approx(math.exp(p[1]), rel=1e-10)


def test_pregeodesic_reduces_to_geodesic():
    for ch, p in _kerr_points(10, 25):
        a = raychaudhuri_residuals(KERR, ch, "k", p)
        b = pregeodesic_residual(KERR, ch, "k", p)
        assert abs(b.lam) < 1e-12
        assert abs(a.r1 - b.r3) < 1e-10 and abs(a.r2 - b.r4) < 1e-10


def test_pregeodesic_constant_rescale():
    for ch, p in _kerr_points(10, 26):
        res = pregeodesic_residual(KERR_EXTRA, ch, "k2", p)
        assert abs(res.lam) < 1e-12
        assert abs(res.r3) < 1e-9 and abs(res.r4) < 1e-9
        base = optical_scalars(KERR_EXTRA, ch, "k", p).twist_sq
        assert res.terms["iota2"] == pytest.approx(4 * base, rel=1e-12)


def test_pregeodesic_finite_difference_cross_check():
    for ch, p in _kerr_points(3, 27):
        a = pregeodesic_residual(KERR, ch, "K", p)
        b = pregeodesic_residual(KERR, ch, "K", p, method="finite_difference")
        assert a.terms["K_psi"] == pytest.approx(b.terms["K_psi"], rel=1e-6)
        assert a.terms["K_iota2"] == pytest.approx(b.terms["K_iota2"], rel=1e-6)


def test_non_geodesic_field_is_refused():
    p = (0.0, 0.0, 0.7, 0.0)
    with pytest.raises(PreconditionError):
        raychaudhuri_residuals(SWIRL, "c", "k", p)
    with pytest.raises(PreconditionError):
        pregeodesic_residual(SWIRL, "c", "k", p)
    with pytest.warns(RuntimeWarning, match="not geodesic"):
        optical_scalars(SWIRL, "c", "k", p)


def test_frobenius_value():
    assert frobenius_value(KERR, "bl", "k", (0.0, 1.3, math.pi / 2, 0.0)) < 1e-9
    assert frobenius_value(KERR, "bl", "k", P45) > 0.1
    assert frobenius_value(FLAT, "cart", "k", (0, 0, 0, 0)) == 0.0


def test_frobenius_and_twist_share_zero_set():
    rng = np.random.default_rng(28)
    # half the samples sit exactly on the equator
    for i in range(200):
        th = math.pi / 2 if i % 2 else rng.uniform(0.05, 3.09)
        p = (rng.uniform(-5, 5), rng.uniform(0.5, 5), th, rng.uniform(0, 6.28))
        fv = frobenius_value(KERR, "bl", "k", p)
        tw = optical_scalars(KERR, "bl", "k", p).twist_sq
        assert (fv < 1e-9) == (tw < 1e-9)


def test_screen_trace_equals_divergence():
    for ch, p in _kerr_points(30, 29):
        s = optical_scalars(KERR, ch, "k", p)
        assert s.theta == pytest.approx(s.divergence, abs=1e-8)


# -- frame invariance ------------------------------------------------------------


def _changed_frame(fr, g, angle, a, b, flip):
    c, s = math.cos(angle), math.sin(angle)
    x = c * fr.x + s * fr.y
    y = -s * fr.x + c * fr.y
    # null rotation about k
    L = fr.L + a * x + b * y + 0.5 * (a * a + b * b) * fr.k
    x, y = x + a * fr.k, y + b * fr.k
    if flip:
        x, y = y, x
    return NullFrame(fr.point, fr.k, L, x, y)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(-3, 3), st.floats(-3, 3), st.booleans(),
       st.integers(0, 2**32 - 1))
def test_scalars_are_frame_independent(angle, a, b, flip, seed):
    ch, p = _kerr_points(1, seed)[0]
    c = Congruence(KERR, ch, "k", p)
    g, nab = c.geo.g, c.nabla
    base = c.scalars
    fr = _changed_frame(c.frame, g, angle, a, b, flip)
    assert frame_residual(g, fr) < 1e-9 * (1 + a * a + b * b) * c.geo.scale
    other = scalars_from_screen(screen_matrix(g, nab, fr), base.divergence)
    tol = 1e-8 * (1 + a * a + b * b)
    assert other.theta == pytest.approx(base.theta, abs=tol)
    assert other.shear_sq == pytest.approx(base.shear_sq, abs=tol)
    assert other.twist_sq == pytest.approx(base.twist_sq, abs=tol)
    assert other.twist == pytest.approx(-base.twist if flip else base.twist, abs=tol)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10), st.integers(0, 2**32 - 1))
def test_scaling_law(c, seed):
    ch, p = _kerr_points(1, seed)[0]
    cong = Congruence(KERR, ch, "k", p)
    g = cong.geo.g
    base = cong.scalars
    fr = cong.frame
    # rescaling k by c rescales L by 1/c; the screen is untouched
    scaled = NullFrame(fr.point, c * fr.k, fr.L / c, fr.x, fr.y)
    s = scalars_from_screen(screen_matrix(g, c * cong.nabla, scaled), c * base.divergence)
    assert s.theta == pytest.approx(c * base.theta, rel=1e-12, abs=1e-14)
    assert s.twist == pytest.approx(c * base.twist, rel=1e-12, abs=1e-14)
    assert s.shear_sq == pytest.approx(c * c * base.shear_sq, rel=1e-12, abs=1e-14)


def test_seeded_frames_agree():
    geo = engine(KERR, "bl").at(P45)
    k = geo.jet("k", 0).value
    seeds = [(1, 0, 0, 0), (0, 1, 0, 0), (1, 2, 3, 4)]
    values = [optical_scalars(KERR, "bl", "k", P45, seed=s).twist_sq for s in seeds]
    assert np.allclose(values, 8 / 9, atol=1e-12)
    with pytest.raises(FrameError, match="orthogonal"):
        build_null_frame(KERR, "bl", P45, k, seed=k)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        optical_scalars(KERR, "bl", "k", P45)
