import numpy as np
import pytest
from hypothesis import given, strategies as st

from sphere_amplitudes.geometry import (THETA, ComplexPoint, CylindricalMetric, DiscSpec, FlatMetric, MobiusMap,
                                        PullbackMetric, RoundMetric, ScaledMetric, StandardMetric,
                                        check_disjoint, check_reflection_invariance, conformal_factor,
                                        disc_map, distance_ratio_limit, geodesic_distance, metric_from_dict,
                                        parametrization_maps, reflect, standard_metric)

finite = st.floats(-5, 5, allow_nan=False)
nonzero_point = st.tuples(finite, finite).map(lambda p: complex(*p)).filter(lambda z: abs(z) > 1e-3)


def test_reflect_examples():
    assert reflect(2 + 0j).value == pytest.approx(0.5)
    assert reflect(1j).value == pytest.approx(1j)
    assert abs(reflect(reflect(3 + 4j)).value - (3 + 4j)) < 1e-14


def test_reflect_swaps_poles():
    assert reflect(0j).is_infinity
    assert reflect(ComplexPoint(0.0, "zeta")).value == 0


@given(nonzero_point)
def test_reflection_is_involution(z):
    assert abs(reflect(reflect(z)).value - z) <= 1e-14 * max(1.0, abs(z))


@given(st.floats(0.5, 2.0), st.floats(0, 2 * np.pi))
def test_chart_round_trip(r, a):
    p = ComplexPoint(r * np.exp(1j * a))
    assert abs(p.to_chart("zeta").to_chart("z").value - p.value) < 1e-14


@pytest.mark.parametrize("metric", [RoundMetric(), CylindricalMetric(), standard_metric("massive", 0.3),
                                    standard_metric("flat", 0.3), standard_metric("flat", 0.05)])
def test_builtin_metrics_reflection_invariant(metric, rng):
    z = np.exp(rng.uniform(-3, 3, 300) + 2j * np.pi * rng.uniform(size=300))
    assert check_reflection_invariance(metric, z, 1e-12)["pass"]


def test_flat_metric_fails_reflection_invariance():
    r = check_reflection_invariance(FlatMetric(), np.array([2.0, 0.3j]), 1e-12)
    assert not r["pass"] and r["maxError"] > 1


def test_reflection_check_rejects_origin():
    with pytest.raises(ValueError):
        check_reflection_invariance(RoundMetric(), np.array([0.0]))


@given(st.floats(0.01, 1.0), st.floats(0, 2 * np.pi), st.floats(0.05, 10.0))
def test_standard_metrics_rotation_invariant(d, angle, r):
    for flavor in ("massive", "flat"):
        m = standard_metric(flavor, d)
        a, b = m.log_density(np.array([r])), m.log_density(np.array([r * np.exp(1j * angle)]))
        assert abs(a - b)[0] < 1e-12


def test_standard_flat_values():
    d = 0.2
    m = standard_metric("flat", d)
    assert m.density(np.array([np.exp(-3 * d)]))[0] == pytest.approx(1.0, abs=1e-14)
    assert m.density(np.array([1.0]))[0] == pytest.approx(1.0, abs=1e-14)
    z = np.exp(3 * d) * np.exp(0.4j)
    assert m.density(np.array([z]))[0] == pytest.approx(abs(z) ** -4, rel=1e-14)


def test_standard_massive_cylinder_band():
    d = 0.3
    m = standard_metric("massive", d)
    z = np.exp(np.linspace(-d, d, 7)) * np.exp(1.1j)
    np.testing.assert_allclose(m.density(z), np.abs(z) ** -2, rtol=1e-14)


def test_standard_metric_rejects_bad_d():
    for d in (0.0, -1.0):
        with pytest.raises(ValueError):
            standard_metric("massive", d)


def test_disc_maps_examples():
    a = disc_map(DiscSpec("interior", 2.0, 0.5))
    assert abs(a(2.0)) < 1e-15 and abs(a(2.5) - 1) < 1e-15
    j = parametrization_maps(DiscSpec("interior", 0.0, 1.0))
    assert j.almost_equal(MobiusMap.identity())
    e = disc_map(DiscSpec("exterior", 0.0, 1.0))
    assert abs(abs(e(2.0)) - 0.5) < 1e-15


def test_disc_rejects_zero_radius():
    with pytest.raises(ValueError):
        DiscSpec("interior", 0.0, 0.0)


@given(st.sampled_from(["interior", "exterior"]), st.sampled_from(["in", "out"]),
       st.tuples(finite, finite).map(lambda p: complex(*p)), st.floats(0.1, 3.0), st.floats(-3, 3))
def test_parametrization_maps_boundary_to_unit_circle(shape, orient, c, r, twist):
    D = DiscSpec(shape, c, r, orient, twist)
    edge = D.boundary(64)
    np.testing.assert_allclose(np.abs(D.parametrization()(edge)), 1.0, atol=1e-12)
    inside = D.alpha().inverse()(0.3 + 0.2j)
    w = D.parametrization()(np.array([inside]))
    assert (abs(w[0]) < 1) == (orient == "in")


@given(st.sampled_from(["interior", "exterior"]), st.sampled_from(["in", "out"]), st.floats(-3, 3))
def test_pullback_of_standard_metric_matches_disc_metric(shape, orient, twist):
    g0 = standard_metric("massive", 0.3)
    D = DiscSpec(shape, 0.5 - 0.2j, 0.7, orient, twist)
    untwisted = DiscSpec(shape, 0.5 - 0.2j, 0.7, orient, 0.0)
    z = D.alpha().inverse()(0.6 * np.exp(2j * np.pi * np.arange(12) / 12))
    a = PullbackMetric(g0, D.parametrization()).log_density(z)
    b = PullbackMetric(g0, untwisted.parametrization()).log_density(z)
    np.testing.assert_allclose(a, b, atol=1e-12)


def _random_mobius(rng):
    a, b, c, d = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    return MobiusMap(a, b, c, d, bool(rng.integers(2)))


def test_mobius_group_laws(rng):
    z = rng.standard_normal(100) + 1j * rng.standard_normal(100)
    for _ in range(20):
        m, n, p = _random_mobius(rng), _random_mobius(rng), _random_mobius(rng)
        np.testing.assert_allclose(m.compose(m.inverse())(z), z, atol=1e-10 * np.max(np.abs(z)))
        lhs = m.compose(n).compose(p)(z)
        rhs = m.compose(n.compose(p))(z)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10)


def test_mobius_rejects_degenerate():
    with pytest.raises(ValueError):
        MobiusMap(1, 2, 2, 4)


def test_theta_is_involution(rng):
    z = rng.standard_normal(50) + 1j * rng.standard_normal(50)
    np.testing.assert_allclose(THETA(THETA(z)), z, rtol=1e-14)


def test_conformal_factor_examples():
    assert conformal_factor(RoundMetric(), RoundMetric(), 0.3) == 0
    assert conformal_factor(CylindricalMetric(), FlatMetric(), 1.0) == pytest.approx(0.0, abs=1e-15)
    assert conformal_factor(RoundMetric(), FlatMetric(), 0.0) == pytest.approx(np.log(4.0))


def test_geodesic_examples():
    assert geodesic_distance(FlatMetric(), 0.0, 1.0) == pytest.approx(1.0, abs=1e-6)
    scaled = ScaledMetric(FlatMetric(), 2 * np.log(3.0))
    assert geodesic_distance(scaled, 0.1, 0.3) == pytest.approx(0.6, rel=1e-6)
    z = 2.0
    assert geodesic_distance(RoundMetric(), 0.0, z) == pytest.approx(2 * np.arctan(z), rel=1e-3)


def test_distance_ratio_constant_sigma():
    r = distance_ratio_limit(FlatMetric(), 0.8, 0.2)
    np.testing.assert_allclose(r["ratios"], np.exp(0.4), rtol=1e-6)


@pytest.mark.parametrize("x, expected", [(0.0, 1.0), (1.0, np.exp(0.5))])
def test_distance_ratio_limit_real_part(x, expected):
    r = distance_ratio_limit(FlatMetric(), "real(z)", x)
    assert r["limit"] == pytest.approx(expected, rel=0.01)


def test_check_disjoint():
    check_disjoint([DiscSpec("interior", 0.5, 0.2), DiscSpec("interior", -0.5, 0.2)], 0.2)
    with pytest.raises(ValueError):
        check_disjoint([DiscSpec("interior", 0.1, 0.2), DiscSpec("interior", -0.1, 0.2)], 0.2)


def test_metric_serialization_round_trip():
    g0 = standard_metric("flat", 0.3)
    m = PullbackMetric(g0, DiscSpec("interior", 0.2j, 0.4, "in", 0.5).parametrization())
    z = np.array([0.1, 0.2 + 0.1j, -0.3j])
    np.testing.assert_allclose(metric_from_dict(m.to_dict()).log_density(z), m.log_density(z), rtol=1e-15)
    assert isinstance(metric_from_dict(g0.to_dict()), StandardMetric)
