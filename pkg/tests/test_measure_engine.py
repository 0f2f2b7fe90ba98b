import math

import pytest

from polyharm_lab.harmonic_poly import Poly, lewy_polynomial
from polyharm_lab.measure_engine import (
    MeasureError,
    PolyMeasure,
    PreconditionError,
    RadialBump,
    ball_measure,
    bound_regime,
    bounds_check_infinity,
    bounds_check_zero,
    bump_volume_integrals,
    closed_form_ball_measure,
    degree_classify,
    doubling_constants,
    doubling_scan,
    f_r,
    f_r_exact_bounds,
    middle_scale_profile,
    plus_minus_ball_measure,
    r1,
    r2,
    sandwich_at_infinity,
    sandwich_at_zero,
    weak_form_check,
    zeta,
    zeta_star,
)
from polyharm_lab.particle_measure import ParticleMeasure
from polyharm_lab.sphere_quad import build_rule, constants, sphere_area

RULE3 = build_rule(3, 8)
RULE2 = build_rule(2, 64)


def flat(dim: int = 3) -> PolyMeasure:
    return PolyMeasure(Poly.coordinate(dim, 0))


def planar_mixed() -> PolyMeasure:
    """xy + x in the plane."""
    return PolyMeasure(Poly(2, {(1, 1): 1.0, (1, 0): 1.0}))


def test_flat_measure_is_surface_measure_on_the_plane():
    m = flat()
    assert ball_measure(m, 2.0, RULE3) == pytest.approx(4 * math.pi, rel=1e-8)
    assert closed_form_ball_measure(m, 2.0, RULE3) == pytest.approx(4 * math.pi, rel=1e-8)
    assert f_r(m, 1.0, RULE3) == pytest.approx(math.pi / 3, rel=1e-8)


def test_homogeneous_doubling_ratio():
    m = PolyMeasure(lewy_polynomial())
    ratio = ball_measure(m, 2.0, RULE3) / ball_measure(m, 1.0, RULE3)
    assert ratio == pytest.approx(2.0 ** (3 + 3 - 2), rel=1e-7)


def test_scale_multiplies_mass():
    m = planar_mixed()
    assert ball_measure(m.scaled(3.0), 0.7, RULE2) == pytest.approx(
        3.0 * ball_measure(m, 0.7, RULE2), rel=1e-12
    )


def test_plus_and_minus_sides_agree():
    plus, minus = plus_minus_ball_measure(planar_mixed(), 1.3, RULE2)
    assert plus > 0
    assert plus == pytest.approx(minus, rel=1e-10)


def test_dilation_covariance():
    # omega_{h(r .)}(B_s) = r^{2-n} omega_h(B_{rs})
    p = planar_mixed().poly
    dilated = PolyMeasure(p.dilate(3.0))
    assert ball_measure(dilated, 0.5, RULE2) == pytest.approx(
        ball_measure(PolyMeasure(p), 1.5, RULE2), rel=1e-10
    )


def test_f_r_by_quadrature():
    # x in the plane: omega(B_r) = 2r and F_r = r^2
    m = flat(2)
    assert ball_measure(m, 0.8, RULE2) == pytest.approx(1.6, rel=1e-10)
    assert f_r(m, 1.5, RULE2, method="quadrature") == pytest.approx(2.25, rel=1e-7)
    assert f_r(m, 1.5, RULE2) == pytest.approx(2.25, rel=1e-10)

    bounds = f_r_exact_bounds(planar_mixed(), 2.0, RULE2, method="quadrature")
    assert bounds.holds
    assert bounds.lower < bounds.value < bounds.upper


def test_preconditions():
    with pytest.raises(MeasureError):
        PolyMeasure(Poly(3, {(2, 0, 0): 1.0}))
    with pytest.raises(MeasureError):
        PolyMeasure(Poly.zero(3))
    with pytest.raises(MeasureError):
        PolyMeasure(Poly.coordinate(3, 0), scale=0.0)
    with pytest.raises(PreconditionError):
        PolyMeasure(Poly(3, {(1, 0, 0): 1.0, (0, 0, 0): 1.0}))
    with pytest.raises(PreconditionError):
        closed_form_ball_measure(planar_mixed(), 1.0, RULE2)
    with pytest.raises(MeasureError):
        ball_measure(flat(), -1.0, RULE3)
    with pytest.raises(MeasureError):
        ball_measure(flat(), 1.0, RULE2)
    with pytest.raises(MeasureError):
        f_r(flat(), 1.0, RULE3, method="simpson")


def test_zeta_and_thresholds():
    m = PolyMeasure(Poly(3, {(1, 1, 0): 1.0, (1, 0, 0): 1.0}))
    assert zeta_star(m, RULE3) == pytest.approx(0.5, rel=1e-7)
    assert zeta(m, RULE3) == pytest.approx(2.0, rel=1e-7)
    area = sphere_area(3)
    assert r1(m, RULE3) == pytest.approx(1 + 12 * area * 2.0 / constants(3, 2).l, rel=1e-7)
    assert r2(m, RULE3) == pytest.approx(constants(3, 1).l / (72 * area * 0.5), rel=1e-7)

    lewy = PolyMeasure(lewy_polynomial())
    assert zeta(lewy, RULE3) == 0.0
    assert r1(lewy, RULE3) == 1.0
    assert r2(lewy, RULE3) == 0.5


def test_two_sided_bounds():
    m = planar_mixed()
    assert sandwich_at_infinity(m, 2.0 * r1(m, RULE2), RULE2).holds
    assert sandwich_at_zero(m, 0.5 * r2(m, RULE2), RULE2).holds
    with pytest.raises(PreconditionError):
        sandwich_at_zero(m, 1.0, RULE2)
    with pytest.raises(PreconditionError):
        sandwich_at_infinity(m, 1.0, RULE2)

    lewy = PolyMeasure(lewy_polynomial())
    assert sandwich_at_infinity(lewy, 1.0, RULE3).holds


def test_doubling_scan_of_homogeneous_measure():
    saddle = PolyMeasure(Poly(2, {(2, 0): 1.0, (0, 2): -1.0}))
    scan = doubling_scan(saddle, 2.0, 0.1, 10.0, 8, RULE2)
    assert len(scan.rows()) == 8
    assert all(q == pytest.approx(4.0, rel=1e-9) for q in scan.ratios)
    assert scan.exponent_at_zero == pytest.approx(2.0, abs=1e-8)
    assert scan.exponent_at_infinity == pytest.approx(2.0, abs=1e-8)
    assert scan.bound_violations == 0
    assert scan.header()["tau"] == 2.0


def test_doubling_scan_rejects_bad_grids():
    m = flat(2)
    with pytest.raises(MeasureError):
        doubling_scan(m, 1.0, 0.1, 1.0, 8, RULE2)
    with pytest.raises(MeasureError):
        doubling_scan(m, 2.0, 1.0, 0.1, 8, RULE2)
    with pytest.raises(MeasureError):
        doubling_scan(m, 2.0, 0.1, 1.0, 3, RULE2)


def test_degree_classification():
    result = degree_classify(planar_mixed(), RULE2, steps=24)
    assert result.status == "ok"
    assert result.degrees == (1, 2)
    assert (result.expected_j, result.expected_d) == (1, 2)


def test_middle_scale_profile():
    profile = middle_scale_profile(planar_mixed(), RULE2, steps=6)
    assert profile.zeta_product == pytest.approx(1.0, rel=1e-7)
    assert profile.r2 < profile.r1
    assert profile.min_ratio <= profile.max_ratio
    assert len(profile.radii) == 6


def test_weak_identity_on_the_flat_measure():
    bump = RadialBump(center=(0.0, 0.2, 0.1), radius=0.5)
    plus, minus = bump_volume_integrals(flat(), bump, build_rule(3, 96))
    expected = bump.hyperplane_integral(3)
    assert expected > 0
    assert plus == pytest.approx(expected, rel=1e-3)
    assert minus == pytest.approx(expected, rel=1e-3)

    with pytest.raises(MeasureError):
        RadialBump(center=(0.0, 0.0, 0.0), radius=0.0)


def test_weak_identity_against_particles():
    bump = RadialBump(center=(0.0, 0.2, 0.1), radius=0.5)
    report = weak_form_check(flat(), bump, build_rule(3, 96), seed=1)
    assert report.plus_minus_gap < 3e-3
    assert report.residual <= 0.05 * report.plus_volume

    small = ParticleMeasure.empty(3, 0.5)
    with pytest.raises(MeasureError):
        weak_form_check(flat(), bump, RULE3, particles=small)


def test_doubling_constants():
    area = sphere_area(3)
    same = doubling_constants(3, 2)
    assert same.j == 2
    assert same.C_nd == pytest.approx(6 * area / constants(3, 2).l)
    assert same.c_nj == same.C_nd
    mixed = doubling_constants(3, 2, 1)
    assert mixed.c_nj == pytest.approx(6 * area / constants(3, 1).l)
    assert mixed.c_nj < mixed.C_nd


def test_bounds_checks():
    m = planar_mixed()
    assert bounds_check_infinity(m, 4.0 * r1(m, RULE2), RULE2)
    assert bounds_check_zero(m, 0.1 * r2(m, RULE2), RULE2)
    assert bounds_check_infinity(PolyMeasure(lewy_polynomial()), 2.0, RULE3)


def test_zero_side_bound_needs_the_outer_ball_inside_r2():
    assert bound_regime(0.3, 2.0, 10.0, 0.5) is None
    assert bound_regime(0.2, 2.0, 10.0, 0.5) == "zero"
    assert bound_regime(0.26, 2.0, 10.0, 0.5) is None
    assert bound_regime(11.0, 2.0, 10.0, 0.5) == "infinity"
    assert bound_regime(1.0, 2.0, 10.0, 0.5) is None
