import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nullsymp import atlas
from nullsymp.catalog import get_spacetime
from nullsymp.dsl import parse_spacetime
from nullsymp.errors import PreconditionError
from nullsymp.geometry import engine
from nullsymp.optics import Congruence, NullFrame
from nullsymp.symplectic import (
    closedness_residual, contact_check_3d, frame_pairings, lagrangian_residual,
    liouville_field, liouville_residual, nondegeneracy_report, omega_at, pfaffian4,
)

KERR = get_spacetime("kerr_fast").spec
RS3 = get_spacetime("r_x_s3").spec
FLAT = get_spacetime("minkowski_cartesian").spec
LOR3 = get_spacetime("s3_lorentz_3d").spec
P45 = (0.0, 1.0, math.pi / 4, 0.0)

FLAT_CONST_F = parse_spacetime(get_spacetime("minkowski_cartesian").entry.source().replace(
    "scalar f = t", "scalar f = 0.3"))

FLAT3 = parse_spacetime("""\
spacetime flat3
dim 3
chart c
  coords t x y
  g tt = -1
  g xx = 1
  g yy = 1
  vector k = ( 1 , 0 , 0 )
""")


def _doubled(spec_source):
    out = []
    for line in spec_source.splitlines():
        out.append(line)
        if line.startswith("  vector k = ( "):
            inner = line[len("  vector k = ( "):-2]
            comps = " , ".join(f"2*({c.strip()})" for c in inner.split(","))
            out.append(f"  vector k2 = ( {comps} )")
    return parse_spacetime("\n".join(out) + "\n")


LOR3_DOUBLED = _doubled(get_spacetime("s3_lorentz_3d").entry.source())


def _points(spec, n, seed):
    return atlas.sample_points(spec, n, np.random.default_rng(seed))


def test_minkowski_omega():
    w = omega_at(FLAT, "cart", "k", "f", (0.7, 0.1, 0.2, 0.3))
    want = np.zeros((4, 4))
    want[0, 1], want[1, 0] = math.exp(0.7), -math.exp(0.7)
    assert np.allclose(w.components, want, rtol=1e-15, atol=0)
    assert w.rank == 2


def test_minkowski_pairings_and_degeneracy():
    p = (0.7, 0.1, 0.2, 0.3)
    rep = nondegeneracy_report(FLAT, "cart", "k", "f", p)
    assert rep.omega_kL == pytest.approx(-math.exp(0.7), rel=1e-15)
    assert rep.kf == 1.0
    assert rep.pfaffian == 0.0 and rep.nondegenerate is False


def test_constant_f_kills_kL_pairing():
    for ch, p in _points(FLAT_CONST_F, 10, 1):
        assert frame_pairings(FLAT_CONST_F, ch, "k", "f", p).omega_kL == 0.0


def test_kerr_nondegenerate_on_grid():
    flags = [nondegeneracy_report(KERR, "bl", "k", "f", (0.0, r, th, 0.0)).nondegenerate
             for r in np.linspace(0.5, 5, 20) for th in np.linspace(0.05, 1.5, 20)]
    assert all(flags)


@pytest.mark.parametrize("spec", [KERR, RS3], ids=["kerr", "r_x_s3"])
def test_frame_pairings_at_random_points(spec):
    for ch, p in _points(spec, 100, 2):
        rep = nondegeneracy_report(spec, ch, "k", "f", p)
        assert abs(rep.pairing_kL_residual) < 1e-8
        assert abs(rep.pairing_xy_residual) < 1e-7
        assert abs(rep.omega_kx) < 1e-9 and abs(rep.omega_ky) < 1e-9
        assert rep.det_identity_relative < 1e-7


def test_kerr_determinant_at_45_degrees():
    rep = nondegeneracy_report(KERR, "bl", "k", "f", P45)
    want = math.exp(4) * 1.0 * 8 / 9
    assert rep.det_frame == pytest.approx(want, rel=1e-7)
    assert rep.det_frame == pytest.approx(rep.pfaffian ** 2, rel=1e-9)
    assert rep.det_coordinate != pytest.approx(rep.det_frame)


def test_kerr_equator_is_degenerate():
    rep = nondegeneracy_report(KERR, "bl", "k", "f", (0.0, 1.7, math.pi / 2, 0.3))
    assert abs(rep.pfaffian) < 1e-12
    assert rep.nondegenerate is False


def test_degeneracy_tracks_kf_times_iota():
    # Pf = omega(k, L) omega(x, y) = e^{2f} k(f) iota, so the verdict flips with |cos(theta)|
    for th in np.linspace(math.pi / 2 - 1e-6, math.pi / 2 + 1e-6, 21):
        rep = nondegeneracy_report(KERR, "bl", "k", "f", (0.0, 1.0, th, 0.0))
        product = abs(rep.kf * rep.iota)
        assert abs(rep.pfaffian) == pytest.approx(math.exp(2) * product, rel=1e-6, abs=1e-14)
        assert rep.nondegenerate == (product > 1e-10)


def test_liouville_identity():
    for spec in (KERR, RS3):
        for ch, p in _points(spec, 100, 3):
            assert liouville_residual(spec, ch, "k", "f", p) < 1e-8


def test_liouville_with_coordinate_time():
    for ch, p in _points(KERR, 20, 4):
        assert liouville_residual(KERR, ch, "k", "f_time", p) < 1e-8
        # k(t) != 1, so k itself is not Liouville for this f
        assert liouville_residual(KERR, ch, "k", "f_time", p, raw_field=True) > 1e-3
        assert liouville_residual(KERR, ch, "k", "f", p, raw_field=True) < 1e-8


def test_liouville_needs_kf():
    with pytest.raises(PreconditionError, match="k\\(f\\) vanishes"):
        liouville_residual(FLAT_CONST_F, "cart", "k", "f", (0, 0, 0, 0))


def test_liouville_field_normalises():
    X = liouville_field(KERR, "k", "f_time")["bl"]
    p = (0.0, 1.0, 0.5, 0.0)
    vals = engine(KERR, "bl").evaluate(X, p)
    assert vals[0] == pytest.approx(1.0)


@pytest.mark.parametrize("spec", [KERR, RS3, FLAT], ids=["kerr", "r_x_s3", "flat"])
def test_closedness(spec):
    for ch, p in _points(spec, 30, 5):
        scale = 1 + float(np.max(np.abs(engine(spec, ch).at(p).g)))
        assert closedness_residual(spec, ch, "k", "f", p) < 1e-8 * scale


def test_closedness_on_kerr_grid():
    worst = max(closedness_residual(KERR, "bl", "k", "f", (0.0, r, th, 1.0))
                for r in np.linspace(0.5, 5, 20) for th in np.linspace(0.05, 1.5, 20))
    assert worst < 1e-7


@pytest.mark.parametrize("spec", [KERR, RS3], ids=["kerr", "r_x_s3"])
def test_mutated_primitive_is_caught(spec):
    worst = max(closedness_residual(spec, ch, "k", "f", p, corrupt_alpha=True)
                for ch, p in _points(spec, 10, 6))
    assert worst > 1e-2


def test_lagrangian_residual():
    geo = engine(KERR, "bl").at(P45)
    c = Congruence(KERR, "bl", "k", P45)
    fr = c.frame
    assert lagrangian_residual(KERR, "bl", "k", "f", P45, fr.x) < 1e-9
    rng = np.random.default_rng(7)
    for _ in range(20):
        a, b = rng.normal(size=2)
        assert lagrangian_residual(KERR, "bl", "k", "f", P45, a * fr.x + b * fr.y) < 1e-9
        # adding a multiple of k keeps v in k-perp
        v = a * fr.x + b * fr.y + rng.normal() * fr.k
        assert lagrangian_residual(KERR, "bl", "k", "f", P45, v) < 1e-9
    with pytest.raises(PreconditionError, match="not orthogonal"):
        lagrangian_residual(KERR, "bl", "k", "f", P45, fr.L)
    assert geo.inner(fr.k, fr.L) == pytest.approx(-1)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(-2, 2), st.floats(-2, 2),
       st.integers(0, 2**32 - 1))
def test_pairings_hold_in_every_admissible_frame(angle, a, b, seed):
    ch, p = _points(KERR, 1, seed)[0]
    base = nondegeneracy_report(KERR, ch, "k", "f", p)
    w = omega_at(KERR, ch, "k", "f", p)
    fr = Congruence(KERR, ch, "k", p).frame
    c, s = math.cos(angle), math.sin(angle)
    x, y = c * fr.x + s * fr.y, -s * fr.x + c * fr.y
    L = fr.L + a * x + b * y + 0.5 * (a * a + b * b) * fr.k
    x, y = x + a * fr.k, y + b * fr.k
    new = NullFrame(fr.point, fr.k, L, x, y)
    ef = math.exp(base.f)
    tol = 1e-7 * (1 + a * a + b * b) * ef
    assert w(new.k, new.L) + ef * base.kf == pytest.approx(0, abs=tol)
    assert w(new.x, new.y) + ef * base.iota == pytest.approx(0, abs=tol)
    W = np.array([[w(u, v) for v in (new.k, new.x, new.y, new.L)]
                  for u in (new.k, new.x, new.y, new.L)])
    assert pfaffian4(W) == pytest.approx(base.pfaffian, rel=1e-7 * (1 + a * a + b * b))


def test_contact_on_lorentzian_s3():
    vols = []
    for ch, p in _points(LOR3, 100, 8):
        rep = contact_check_3d(LOR3, ch, "k", p)
        vols.append(abs(rep.volume_factor))
        assert rep.reeb_residual_interior < 1e-8 and rep.reeb_residual_pairing < 1e-8
        # sign follows the chart orientation
        assert abs(rep.metric_volume_factor) == pytest.approx(2.0, rel=1e-9)
    assert min(vols) > 0.1 * float(np.median(vols))


def test_flat_time_form_is_not_contact():
    for p in [(0, 0, 0), (1.0, -2.0, 0.5)]:
        rep = contact_check_3d(FLAT3, "c", "k", p)
        assert rep.volume_factor == 0.0


def test_contact_preconditions():
    with pytest.raises(PreconditionError, match="unit timelike"):
        contact_check_3d(LOR3_DOUBLED, "x1p", "k2", (0.1, 0.2, 0.3))
    with pytest.raises(PreconditionError, match="dimension 3"):
        contact_check_3d(KERR, "bl", "k", P45)
