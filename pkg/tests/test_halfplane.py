import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbarlab.halfplane import (IDENTITY, WBAR, CoefficientField, W, WeightedL2, adjoint_residual, apply,
                               apply_W, apply_W_sigma, apply_Wbar, apply_Wbar_sigma, form_Q, form_Qbar,
                               fundamental_identity_residual, hyperbolic_l2, rho_weighted_norm, shift_constant,
                               sigma_norm, w_alpha, wbar_sigma)
from dbarlab.hyperbolic import DomainSpec
from dbarlab.mesh import build_mesh
from dbarlab.solver import bump_field, function_space, monomial_field
from dbarlab.spectrum import SigmaLabel


@pytest.fixture(scope="module")
def l2(coarse_space):
    return hyperbolic_l2(coarse_space)


@pytest.fixture(scope="module")
def fine_space():
    return function_space(build_mesh(DomainSpec.disc(2j, 1.0), 0.05))


def bump(space, center=2j, radius=0.5, wave=2 + 1j):
    return CoefficientField.interpolate(space, bump_field(center, radius, wave).value)


# -- first-order operators -------------------------------------------------------

def test_operator_shifts():
    lab = SigmaLabel(1, 2.0, 1.0, nu=0.5)
    assert (wbar_sigma(lab).c0, wbar_sigma(lab).cs) == (-(1.0 + 0.5) / 2, 1.0)
    assert w_alpha(0.25) == W + 0.25


def test_W_of_constant_is_zero(coarse_space):
    one = CoefficientField.interpolate(coarse_space, lambda t, s: 1 + 0 * t)
    assert np.abs(apply_W(one).values).max() < 1e-13
    assert np.abs(apply_Wbar(one).values).max() < 1e-13


def test_W_exact_on_linear_fields(coarse_space, l2):
    u = CoefficientField.interpolate(coarse_space, lambda t, s: (1 + 2j) * t + 3 * s)
    expected = l2.project(lambda t, s: s * (3 + 1j * (1 + 2j)))
    assert l2.norm(apply_W(u) - expected) < 1e-10 * l2.norm(expected)


def test_W_minus_log_s_is_minus_one(coarse_space, l2, frozen):
    assert frozen["symbolic"]["W_minus_log"] == -1.0
    u = CoefficientField.interpolate(coarse_space, lambda t, s: -np.log(s) + 0j)
    err = apply_W(u) + 1.0
    # elementwise exact for the interpolant; first order in h against the true field
    assert l2.norm(err) / l2.norm(apply_W(u)) < coarse_space.mesh.h


@pytest.mark.parametrize("a", [-1.5, 0.5, 2.0])
def test_W_of_power_of_s(coarse_space, l2, a, frozen):
    assert frozen["symbolic"]["W_s_pow"] and frozen["symbolic"]["Wbar_s_pow"]
    u = CoefficientField.interpolate(coarse_space, lambda t, s: s ** a + 0j)
    for op in (apply_W, apply_Wbar):
        err = l2.norm(op(u) - a * u) / l2.norm(u)
        assert err < abs(a) * coarse_space.mesh.h


def test_Wbar_sigma_annihilates_holomorphic(fine_space):
    lab = SigmaLabel(1, 2.0, 1.0)
    l2f = hyperbolic_l2(fine_space)
    f = monomial_field(lab, 2, center=2j)
    pts = l2f.points
    assert np.abs(f.first_order(wbar_sigma(lab))(pts[..., 0], pts[..., 1])).max() < 1e-12
    u = CoefficientField.interpolate(fine_space, f.value)
    assert l2f.norm(apply_Wbar_sigma(lab, u)) < 0.05 * l2f.norm(apply_W_sigma(lab, u))


# -- weighted L^2 ----------------------------------------------------------------

def test_inner_product_conjugate_symmetric(coarse_space, l2, rng):
    u = bump(coarse_space, wave=complex(*rng.normal(size=2)))
    v = bump(coarse_space, center=2.1j + 0.1, wave=complex(*rng.normal(size=2)))
    assert l2.inner(u, v) == pytest.approx(np.conj(l2.inner(v, u)), abs=1e-14)
    assert l2.inner(u, u).imag == pytest.approx(0.0, abs=1e-14)


def test_mass_matrix_matches_quadrature(coarse_space, l2):
    u = bump(coarse_space)
    assert np.vdot(u.values, l2.mass @ u.values).real == pytest.approx(l2.norm(u) ** 2, rel=1e-12)
    assert abs(l2.mass - l2.mass.conj().T).max() < 1e-14


def test_projection_reproduces_space_members(coarse_space, l2):
    u = bump(coarse_space)
    assert l2.norm(l2.project(u) - u) < 1e-10 * l2.norm(u)


def test_norm_matches_oracle(fine_space, frozen):
    fx = frozen["fundamental"]
    l2f = hyperbolic_l2(fine_space, order=8)
    u = bump_field(complex(*fx["center"]), fx["radius"], complex(*fx["wave"]))
    pts = l2f.points
    assert l2f.integrate(np.abs(u(pts[..., 0], pts[..., 1])) ** 2).real == pytest.approx(fx["norm2"], rel=1e-4)


# -- forms -----------------------------------------------------------------------

def test_forms_match_oracle(fine_space, frozen):
    fx = frozen["fundamental"]
    l2f = hyperbolic_l2(fine_space, order=8)
    u = bump_field(complex(*fx["center"]), fx["radius"], complex(*fx["wave"]))
    t, s = l2f.points[..., 0], l2f.points[..., 1]
    q1 = l2f.integrate(np.abs(u.first_order(W + 1.0)(t, s)) ** 2).real
    qb = l2f.integrate(np.abs(u.first_order(WBAR - 1.0)(t, s)) ** 2).real
    assert q1 == pytest.approx(fx["Q_1"], rel=1e-4)
    assert qb == pytest.approx(fx["Qbar_minus1"], rel=1e-4)


def test_discrete_forms_converge_to_oracle(frozen):
    fx = frozen["fundamental"]
    errs = []
    for h in (0.1, 0.05):
        space = function_space(build_mesh(DomainSpec.disc(2j, 1.0), h))
        u = bump(space, complex(*fx["center"]), fx["radius"], complex(*fx["wave"]))
        errs.append(abs(form_Q(1.0, u, u).real - fx["Q_1"]) / fx["Q_1"])
    assert errs[1] < errs[0] and errs[1] < 0.05


def test_Q0_is_norm_of_W(coarse_space, l2):
    u = bump(coarse_space)
    assert form_Q(0.0, u, u).real == pytest.approx(l2.norm(apply_W(u)) ** 2, rel=1e-12)
    assert form_Qbar(0.0, u, u).real == pytest.approx(l2.norm(apply_Wbar(u)) ** 2, rel=1e-12)


def test_forms_hermitian(coarse_space, l2):
    u, v = bump(coarse_space), bump(coarse_space, 2.2j, 0.4, -1 + 1j)
    assert form_Q(0.7, v, u) == pytest.approx(np.conj(form_Q(0.7, u, v)), abs=1e-13)
    assert form_Qbar(-0.3, v, u) == pytest.approx(np.conj(form_Qbar(-0.3, u, v)), abs=1e-13)


def test_fundamental_identity_trivial_at_zero_shift(coarse_space, l2):
    u, v = bump(coarse_space), bump(coarse_space, 2.2j, 0.4, -1 + 1j)
    assert fundamental_identity_residual(1.3, 0.0, v, u, l2) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.integers(0, 2**31))
def test_fundamental_identity_property(coarse_space, alpha, c, seed):
    rng = np.random.default_rng(seed)
    u = bump(coarse_space, 2j + 0.2 * complex(*rng.normal(size=2)), 0.4, complex(*rng.normal(size=2)))
    v = bump(coarse_space, 2j + 0.2 * complex(*rng.normal(size=2)), 0.4, complex(*rng.normal(size=2)))
    assert fundamental_identity_residual(alpha, c, v, u) < 1e-8


@settings(max_examples=15, deadline=None)
@given(st.floats(-2, 3), st.integers(0, 2**31))
def test_adjoint_for_any_weight(coarse_space, nu, seed):
    rng = np.random.default_rng(seed)
    l2n = WeightedL2.for_space(coarse_space, nu)
    u = bump(coarse_space, 2j + 0.2 * complex(*rng.normal(size=2)), 0.4, complex(*rng.normal(size=2)))
    v = bump(coarse_space, 2j + 0.2 * complex(*rng.normal(size=2)), 0.4, complex(*rng.normal(size=2)))
    assert adjoint_residual(u, v, l2n) < 1e-7


def test_adjoint_pairing_matches_oracle(fine_space, frozen):
    fx = frozen["adjoint_nu2"]
    l2n = WeightedL2.for_space(fine_space, 2.0, order=8)
    center = complex(*fx["center"])
    u = bump_field(center, fx["radius"], complex(*fx["wave_u"]))
    v = bump_field(center, fx["radius"], complex(*fx["wave_v"]))
    t, s = l2n.points[..., 0], l2n.points[..., 1]
    val = l2n.integrate(u.first_order(W)(t, s) * np.conj(v(t, s)))
    assert abs(val - complex(*fx["W_u_v"])) < 1e-4 * abs(complex(*fx["W_u_v"]))


# -- shift constant --------------------------------------------------------------

@pytest.mark.parametrize("delta", ["0.5", "1.0", "2.0"])
def test_shift_constant_matches_oracle(frozen, delta):
    C, c = shift_constant(float(delta))
    assert C == pytest.approx(frozen["shift_constant"][delta], rel=1e-12)
    d2 = float(delta) ** 2
    assert 1 - 1 / c ** 2 == pytest.approx(1 + d2 * (1 - c ** 2), abs=1e-12)


def test_shift_constant_at_zero():
    assert shift_constant(0.0) == (1.0, 1.0)


@given(st.floats(0.01, 20))
def test_shift_constant_exceeds_one(delta):
    C, c = shift_constant(delta)
    assert C > 1 and c > 1


# -- norms -----------------------------------------------------------------------

def test_sigma_norm_order_zero_is_l2(coarse_space, l2):
    u = bump(coarse_space)
    assert sigma_norm(0, SigmaLabel(1, 2.0, 1.0), u, l2) == pytest.approx(l2.norm(u), rel=1e-14)


def test_sigma_norm_order_one_definition(coarse_space, l2):
    lab = SigmaLabel(1, 2.0, 1.0)
    u = bump(coarse_space)
    expected = math.sqrt((lab.g * l2.norm(u)) ** 2 + l2.norm(apply_W_sigma(lab, u)) ** 2
                         + l2.norm(apply_Wbar_sigma(lab, u)) ** 2)
    assert sigma_norm(1, lab, u, l2) == pytest.approx(expected, rel=1e-12)


@given(st.complex_numbers(min_magnitude=0.1, max_magnitude=10), st.integers(0, 2))
@settings(deadline=None, max_examples=15)
def test_sigma_norm_homogeneous(coarse_space, c, k):
    lab = SigmaLabel(1, 2.0, 1.0)
    u = bump(coarse_space)
    assert sigma_norm(k, lab, c * u) == pytest.approx(abs(c) * sigma_norm(k, lab, u), rel=1e-10)


def test_sigma_norm_rejects_order(coarse_space):
    with pytest.raises(ValueError):
        sigma_norm(3, SigmaLabel(1, 2.0, 1.0), bump(coarse_space))


def test_rho_norm_without_weight_is_sigma_norm(disc, coarse_space, l2):
    lab = SigmaLabel(1, 2.0, 1.0)
    u = bump(coarse_space)
    for j in (0, 1):
        assert rho_weighted_norm(0, j, lab, disc.rho, u, l2) == pytest.approx(sigma_norm(j, lab, u, l2), rel=1e-12)


def test_rho_norm_equals_sigma_norm_where_rho_is_one(coarse_space, l2):
    thin = DomainSpec.disc(2j, 1.0, delta=0.05)
    lab = SigmaLabel(1, 2.0, 1.0)
    u = bump(coarse_space, 1.75j, 0.3)
    t, s = l2.points[..., 0], l2.points[..., 1]
    support = np.abs(l2.values(u)) > 0
    assert np.all(thin.rho.evaluate(t[support], s[support]) == 1.0)
    assert rho_weighted_norm(1, 0, lab, thin.rho, u, l2) == pytest.approx(sigma_norm(1, lab, u, l2), rel=1e-12)


def test_rho_norm_smaller_near_boundary(disc, coarse_space, l2):
    lab = SigmaLabel(1, 2.0, 1.0)
    u = bump(coarse_space, 2j + 0.8, 0.2)
    assert rho_weighted_norm(1, 0, lab, disc.rho, u, l2) < 0.9 * sigma_norm(1, lab, u, l2)


def test_rho_norm_rejects_order(disc, coarse_space):
    with pytest.raises(ValueError):
        rho_weighted_norm(2, 1, SigmaLabel(1, 2.0, 1.0), disc.rho, bump(coarse_space))


def test_apply_generic_operator(coarse_space, l2):
    u = bump(coarse_space)
    lhs = apply(IDENTITY * 2.0 + W, u)
    assert l2.norm(lhs - (2.0 * u + apply_W(u))) < 1e-12 * l2.norm(lhs)
