import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dbarlab.experiments import (INCONCLUSIVE, REPRODUCED, VIOLATED, ExperimentReport, Table, collar_rule,
                                 disc_polar_rule, half_disc_rule, log_kernel_field, noncompact_gram,
                                 run_convergence, run_disc_nonsurjectivity, run_estimate_sweep,
                                 run_hypoellipticity_demo, run_negregularity, smooth_cutoff)
from dbarlab.halfplane import w_sigma, wbar_sigma
from dbarlab.spectrum import SigmaLabel, sphere_stub_spectrum


def test_disc_polar_rule_area():
    _, wts = disc_polar_rule(2j, 0.7)
    assert wts.sum() == pytest.approx(math.pi * 0.49, rel=1e-14)


def test_half_disc_rule_area():
    eps = 0.05
    exact = math.pi / 2 - eps * math.sqrt(1 - eps * eps) - math.asin(eps)
    w, wts = half_disc_rule(eps)
    assert wts.sum() == pytest.approx(exact, rel=1e-12)
    assert w.imag.min() > eps and np.abs(w).max() < 1


def test_collar_rule_area():
    # the removed piece is almost a half disc of radius r_min, since z0 lies on the circle;
    # the angular range has a square-root endpoint at r = 2, which limits the default rule
    r_min = 1e-4
    exact = math.pi - math.pi * r_min ** 2 / 2
    w, wts = collar_rule(1 + 2j, r_min)
    assert wts.sum() == pytest.approx(exact, rel=1e-3)
    _, fine = collar_rule(1 + 2j, r_min, panels_per_decade=8, n_r=32, n_theta=192)
    assert abs(fine.sum() - exact) < abs(wts.sum() - exact) / 10
    assert np.abs(w - 2j).max() < 1 and np.abs(w - (1 + 2j)).min() > r_min


@given(st.floats(0.01, 1.0), st.floats(0.0, 3.0))
def test_smooth_cutoff_range(eps, x):
    phi, dphi = smooth_cutoff(np.array([x * eps]), eps)
    assert 0.0 <= phi[0] <= 1.0 and dphi[0] >= 0.0
    if x <= 1:
        assert phi[0] == 0.0
    if x >= 2:
        assert phi[0] == 1.0


def test_smooth_cutoff_derivative():
    eps, s, h = 0.1, np.array([0.12, 0.15, 0.18]), 1e-7
    phi_p, _ = smooth_cutoff(s + h, eps)
    phi_m, _ = smooth_cutoff(s - h, eps)
    _, dphi = smooth_cutoff(s, eps)
    np.testing.assert_allclose(dphi, (phi_p - phi_m) / (2 * h), rtol=1e-6)


def test_noncompact_gram_matches_oracle(frozen):
    fx = frozen["noncompact_gram"]
    lab = SigmaLabel(1, 1.0, 2 * fx["exponent"])
    G, dist = noncompact_gram(lab, fx["K"], 2.5j, 0.4, 2j, 1.0)
    expected = np.array(fx["re"]) + 1j * np.array(fx["im"])
    assert np.abs(G - expected).max() < 1e-10
    np.testing.assert_allclose(dist, dist.T)
    assert np.all(np.diag(dist) < 1e-7)


def test_log_kernel_field_matches_symbolic(frozen):
    fx = frozen["symbolic"]
    lab = SigmaLabel(1, 2.0, 1.0)
    u = log_kernel_field(lab)
    for p, ws, wbs in zip(fx["negreg_points"], fx["negreg_W_sigma"], fx["negreg_Wbar_sigma_abs"]):
        assert abs(u.first_order(w_sigma(lab))(*p) - complex(*ws)) < 1e-12
        assert abs(u.first_order(wbar_sigma(lab))(*p)) <= wbs + 1e-12


def test_negregularity_collars_match_oracle(frozen):
    rep = run_negregularity(SigmaLabel(1, 2.0, 1.0), eps_list=(1e-2, 1e-3))
    got = rep.tables["collars"].column("norm_W_sigma_u")
    for eps, val in zip((1e-2, 1e-3), got):
        assert val == pytest.approx(frozen["negreg_collars"][repr(eps)], rel=5e-6)


def test_negregularity_refined_rule_converges(frozen):
    lab = SigmaLabel(1, 2.0, 1.0)
    ws = log_kernel_field(lab).first_order(w_sigma(lab))
    w, wt = collar_rule(1 + 2j, 1e-2, panels_per_decade=8, n_r=32, n_theta=192)
    val = math.sqrt(float(np.sum(wt * w.imag ** -2.0 * np.abs(ws(w.real, w.imag)) ** 2)))
    assert val == pytest.approx(frozen["negreg_collars"]["0.01"], rel=1e-7)


def test_negregularity_rejects_bad_labels():
    with pytest.raises(ValueError):
        run_negregularity(SigmaLabel(1, 0.0, 1.0))
    with pytest.raises(ValueError):
        run_negregularity(SigmaLabel(1, 2.0, 1.0, nu=0.5))


def test_disc_family_matches_oracle(frozen):
    rep = run_disc_nonsurjectivity()
    tab = rep.tables["family"]
    for row, ref in zip(zip(tab.column("j"), tab.column("norm_f"), tab.column("ratio")), frozen["disc_ratios"]):
        assert row[0] == ref["j"]
        assert row[1] == pytest.approx(ref["norm_f"], rel=1e-10)
        assert row[2] == pytest.approx(ref["ratio"], rel=1e-10)


def test_disc_verdict_depends_on_required_drop():
    assert run_disc_nonsurjectivity(J=3, min_drop=1e6).verdict != REPRODUCED


def test_hypoellipticity_without_harmonic_labels_is_not_reproduced(synth):
    _, _, stub = sphere_stub_spectrum(4, 2)
    rep = run_hypoellipticity_demo(stub, stub, 1, caps=(1,), h_levels=(0.1, 0.07))
    assert rep.verdict == VIOLATED
    assert rep.quantities["harmonic_labels"] == 0


def test_shift_sweep_stays_below_constant():
    labels = [SigmaLabel(1, g, l) for g in (0.5, 1.0, 2.0) for l in (-1.0, 0.0, 1.0)]
    rep = run_estimate_sweep("shift", labels, h_levels=(0.2, 0.14))
    assert rep.verdict == REPRODUCED
    assert rep.quantities["max_ratio"] <= rep.quantities["shift_constant"]


def test_sweep_is_deterministic():
    labels = [SigmaLabel(1, g, 1.0) for g in (0.5, 1.0)]
    a = run_estimate_sweep("basic", labels, h_levels=(0.2,), seed=5)
    b = run_estimate_sweep("basic", labels, h_levels=(0.2,), seed=5)
    assert a.to_json() == b.to_json()


def test_convergence_rejects_small_gamma_tangential():
    with pytest.raises(ValueError):
        run_convergence(SigmaLabel(1, 0.5, 1.0), "tangential")


def test_report_serializes_plain_values():
    tab = Table(["a", "b"])
    tab.add(1, 2.5)
    rep = ExperimentReport("x", {"label": SigmaLabel(1, 2.0, 1.0), "z": 1 + 2j},
                           {"v": np.float64(1.5), "arr": np.arange(2)}, {"t": tab}, INCONCLUSIVE, {})
    data = json.loads(rep.to_json())
    assert data["parameters"]["label"] == {"q": 1, "gamma": 2.0, "lambda": 1.0, "nu": 0.0}
    assert data["parameters"]["z"] == [1.0, 2.0]
    assert data["quantities"]["arr"] == [0, 1]
    assert data["tables"]["t"]["rows"] == [[1, 2.5]]
    assert tab.column("b") == [2.5]
