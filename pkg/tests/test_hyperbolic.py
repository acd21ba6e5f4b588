import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbarlab.hyperbolic import (DomainSpec, HalfPlanePoint, MobiusMap, ball_cover, cover_multiplicity,
                                cover_multiplicity_bound, cutoff_pair, distance_array, geodesic_polar_grid,
                                hyperbolic_distance, mobius_pushforward_factor, polyline_distance)

coord = st.floats(-5, 5, allow_nan=False)
height = st.floats(0.05, 5, allow_nan=False)
points = st.builds(HalfPlanePoint, coord, height)


def mobius_maps():
    return st.integers(0, 2**32 - 1).map(lambda seed: MobiusMap.random(np.random.default_rng(seed)))


# -- points and maps ----------------------------------------------------------

@pytest.mark.parametrize("s", [0.0, -1.0, float("nan")])
def test_point_rejects_lower_half_plane(s):
    with pytest.raises(ValueError):
        HalfPlanePoint(0.0, s)


def test_mobius_rejects_bad_determinant():
    with pytest.raises(ValueError):
        MobiusMap(1.0, 1.0, 1.0, 1.0)


def test_distance_identity_case():
    assert hyperbolic_distance(HalfPlanePoint(0, 1), HalfPlanePoint(0, 1)) == 0.0


def test_distance_vertical_geodesic(frozen):
    d = hyperbolic_distance(HalfPlanePoint(0, 1), HalfPlanePoint(0, 4))
    assert d == pytest.approx(frozen["distance_i_4i"], abs=1e-13)


@given(points, points)
def test_distance_symmetric_and_positive(p, q):
    d = hyperbolic_distance(p, q)
    assert d == pytest.approx(hyperbolic_distance(q, p), rel=1e-12, abs=1e-15)
    assert (d > 0) == (p != q) or d < 1e-12


@given(points, points, points)
def test_triangle_inequality(p, q, r):
    assert hyperbolic_distance(p, r) <= hyperbolic_distance(p, q) + hyperbolic_distance(q, r) + 1e-9


@given(points, points, mobius_maps())
def test_distance_mobius_invariant(p, q, m):
    mp, mq = complex(m.apply(p.w)), complex(m.apply(q.w))
    if min(mp.imag, mq.imag) < 1e-6:
        return
    d = hyperbolic_distance(p, q)
    assert hyperbolic_distance(m(p), m(q)) == pytest.approx(d, rel=1e-10, abs=1e-10)


@given(points, mobius_maps())
def test_mobius_preserves_half_plane(p, m):
    assert complex(m.apply(p.w)).imag > 0


@given(mobius_maps(), mobius_maps())
def test_compose_and_inverse(m1, m2):
    w = np.array([0.3 + 1.2j, -1 + 0.5j])
    np.testing.assert_allclose(m1.compose(m2).apply(w), m1.apply(m2.apply(w)), rtol=1e-9)
    np.testing.assert_allclose(m1.inverse().apply(m1.apply(w)), w, rtol=1e-9)


def test_pushforward_identity_and_translation():
    p = HalfPlanePoint(0.4, 1.3)
    assert mobius_pushforward_factor(MobiusMap(1, 0, 0, 1), p) == 1
    assert mobius_pushforward_factor(MobiusMap(1, 2.5, 0, 1), p) == 1


def test_pushforward_matches_oracle(frozen):
    for case in frozen["pushforward"]:
        m = MobiusMap(*case["map"])
        a = mobius_pushforward_factor(m, HalfPlanePoint(*case["point"]))
        assert abs(a - complex(*case["factor"])) < 1e-9


@settings(max_examples=100)
@given(points, mobius_maps())
def test_pushforward_unit_modulus_against_differences(p, m):
    # a = m'(p) s_p / s_m(p), with m' from a central difference
    h = 1e-6
    deriv = (complex(m.apply(p.w + h)) - complex(m.apply(p.w - h))) / (2 * h)
    image = complex(m.apply(p.w))
    if image.imag < 1e-3:
        return
    expected = deriv * p.s / image.imag
    a = mobius_pushforward_factor(m, p)
    assert abs(a) == pytest.approx(1.0, abs=1e-12)
    assert abs(a - expected) < 1e-5 * max(1.0, abs(expected))


# -- domains and defining functions ------------------------------------------

def test_domain_rejects_few_segments():
    with pytest.raises(ValueError):
        DomainSpec.disc(2j, 1.0, segments=32)


def test_domain_rejects_boundary_below_axis():
    with pytest.raises(ValueError):
        DomainSpec.disc(0.5j, 1.0)


def test_domain_rejects_self_intersection():
    th = np.linspace(0, 2 * np.pi, 128, endpoint=False)
    figure_eight = np.column_stack([np.sin(2 * th), 2 + np.sin(th)])
    with pytest.raises(ValueError, match="self-intersecting"):
        DomainSpec(figure_eight)


def test_domain_rejects_large_delta():
    with pytest.raises(ValueError, match="use delta"):
        DomainSpec.disc(2j, 1.0, delta=0.5)


def test_domain_precompact(disc):
    assert np.isfinite(np.abs(disc.boundary).max())
    assert disc.boundary[:, 1].min() > 0


def test_rho_zero_on_boundary(disc):
    v = disc.boundary
    np.testing.assert_allclose(disc.rho.evaluate(v[:, 0], v[:, 1]), 0.0, atol=1e-12)


def test_rho_one_deep_inside(disc):
    p = HalfPlanePoint(0.0, 1.75)
    assert disc.rho.distance(p.t, p.s).item() > 4 * disc.delta
    assert disc.rho(p) == 1.0


def test_rho_collar_point_matches_oracle(frozen):
    domain = DomainSpec.disc(2j, 1.0, delta=0.1)
    t, s = frozen["collar_point"]["point"]
    assert domain.rho(HalfPlanePoint(t, s)) == pytest.approx(frozen["collar_point"]["distance"], abs=1e-6)


def test_rho_properties_on_samples(disc):
    rho = disc.rho
    t, s = disc.sample_interior(2000)
    d = rho.distance(t, s)
    r = rho.evaluate(t, s)
    collar = d < 3 * disc.delta
    np.testing.assert_allclose(r[collar], d[collar], atol=1e-12)
    np.testing.assert_array_equal(r[d > 4 * disc.delta], 1.0)
    assert np.all(r > 0)
    assert rho.b1 > 0
    assert all(math.isfinite(b) for b in rho.Bm)


def test_polyline_distance_to_vertex_is_zero(disc):
    v = disc.boundary[:5]
    np.testing.assert_allclose(polyline_distance(disc.boundary, v[:, 0], v[:, 1]), 0.0, atol=1e-12)


def test_spline_domain_from_vertices():
    th = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    dom = DomainSpec.from_vertices(np.column_stack([np.cos(th), 2 + 0.6 * np.sin(th)]))
    assert len(dom.boundary) >= 256
    assert dom.contains(np.array([0.0]), np.array([2.0]))[0]


# -- cutoffs and covers ---------------------------------------------------------

def test_cutoff_values():
    c = HalfPlanePoint(0.3, 1.5)
    xi, zeta = cutoff_pair(c, 0.2, 0.5)
    assert xi(c.t, c.s) == 1.0
    t, s = geodesic_polar_grid(c, [0.55, 0.8], 16)
    np.testing.assert_array_equal(xi(t, s), 0.0)
    t, s = geodesic_polar_grid(c, np.linspace(0, 0.5, 6), 16)
    np.testing.assert_array_equal(zeta(t, s), 1.0)


def test_cutoff_rejects_bad_radii():
    with pytest.raises(ValueError):
        cutoff_pair(HalfPlanePoint(0, 1), 0.5, 0.5)


def test_cutoff_derivative_sup_is_center_independent():
    rng = np.random.default_rng(7)
    radii = np.linspace(0.0, 0.6, 121)
    sups = []
    for _ in range(50):
        c = HalfPlanePoint(rng.uniform(-3, 3), rng.uniform(0.2, 4))
        xi, _ = cutoff_pair(c, 0.2, 0.5)
        t, s = geodesic_polar_grid(c, radii, 24)
        sups.append(np.abs(xi.W(t, s)).max())
    assert max(sups) - min(sups) < 1e-10


def test_cutoff_W_matches_differences():
    c = HalfPlanePoint(0.1, 2.0)
    xi, _ = cutoff_pair(c, 0.2, 0.5)
    t, s, h = 0.25, 2.3, 1e-6
    ft = (xi(t + h, s) - xi(t - h, s)) / (2 * h)
    fs = (xi(t, s + h) - xi(t, s - h)) / (2 * h)
    assert abs(xi.W(t, s) - s * (fs + 1j * ft)) < 1e-7
    assert abs(xi.Wbar(t, s) - s * (fs - 1j * ft)) < 1e-7


def test_ball_cover_tiny_domain():
    dom = DomainSpec.disc(2j, 0.01)
    assert len(ball_cover(dom, 0.1, 0.2)) == 1


def test_ball_cover_disjoint_covering_and_bounded(disc):
    eps, delta = 0.3, 0.4
    centers = ball_cover(disc, eps, delta)
    t = np.array([c.t for c in centers])
    s = np.array([c.s for c in centers])
    d = distance_array(t[:, None], s[:, None], t[None, :], s[None, :])
    off = ~np.eye(len(centers), dtype=bool)
    assert np.all(d[off] >= eps)            # eps/2-balls pairwise disjoint
    pt, ps = disc.sample_interior(2000)
    near = distance_array(pt[:, None], ps[:, None], t[None, :], s[None, :]).min(axis=1)
    assert near.max() < eps
    assert cover_multiplicity(centers, delta) <= cover_multiplicity_bound(eps, delta)


def test_ball_cover_rejects_bad_radii(disc):
    with pytest.raises(ValueError):
        ball_cover(disc, 0.5, 0.4)
