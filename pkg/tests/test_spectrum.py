import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbarlab.spectrum import (SigmaLabel, SpectralComplex, SpectrumMeta, kohn_rossi_dim, meta_for,
                              sphere_stub_spectrum, synth_complex, validate_spectrum)


def test_label_derived_quantities():
    lab = SigmaLabel(1, 3.0, 1.5, nu=0.5)
    assert lab.alpha == (0.5 + 1.5) / 2 - 1
    assert lab.kernel_exponent == 1.0
    assert lab.g == math.sqrt(4.0)
    top = SigmaLabel(0, 1.0, 0.5, gamma_bar=2.0)
    assert top.g == math.sqrt(1 + 1.0 + 2.0)
    assert SigmaLabel(1, 0.0, 2.0).is_harmonic


def test_meta_rejects_small_n():
    with pytest.raises(ValueError):
        SpectrumMeta(2)


def test_validate_slack_label_passes():
    assert validate_spectrum([SigmaLabel(1, 0.0, 0.0)], SpectrumMeta(3)).passed


def test_validate_lower_bound_violation():
    rep = validate_spectrum([SigmaLabel(1, 0.0, -1.0)], SpectrumMeta(3))
    assert "c" in rep.constraints


def test_validate_gap_violation():
    rep = validate_spectrum([SigmaLabel(1, 0.5, 0.0)], SpectrumMeta(3, gamma0=1.0))
    assert rep.constraints == {"d"}


def test_validate_other_constraints():
    meta = SpectrumMeta(4, c_growth=1.0)
    assert "positivity" in validate_spectrum([SigmaLabel(1, -1.0, 2.0)], meta).constraints
    assert "h" in validate_spectrum([SigmaLabel(1, 1.0, 5.0)], meta).constraints
    assert "G" in validate_spectrum([SigmaLabel(0, 1.0, 1.0, gamma_bar=0.0)], meta).constraints
    assert "degree" in validate_spectrum([SigmaLabel(3, 1.0, 0.0)], meta).constraints
    close = [SigmaLabel(1, 1.0, 0.0), SigmaLabel(1, 1.0 + 1e-8, 0.0)]
    assert "f" in validate_spectrum(close, meta).constraints


def test_synth_single_level_without_differential():
    cx = synth_complex(3, [1], [0.0], seed=0)
    (lab,) = cx.labels()
    assert lab.gamma == 0.0


def test_synth_deterministic():
    a = synth_complex(4, [2, 3, 2], [0.0, 1.0], seed=11)
    b = synth_complex(4, [2, 3, 2], [0.0, 1.0], seed=11)
    assert [(l.q, l.gamma, l.lam) for l in a.labels()] == [(l.q, l.gamma, l.lam) for l in b.labels()]


def test_synth_reports_infeasible_request():
    # a harmonic class is unavoidable at level 1, and lambda < 0 forbids it there
    with pytest.raises(RuntimeError, match="no admissible block"):
        synth_complex(4, [1, 2], [-2.0], seed=0)


def test_synth_negative_lambda_when_exact():
    cx = synth_complex(4, [1, 1], [-1.0], seed=0)
    assert kohn_rossi_dim(cx, 0) == kohn_rossi_dim(cx, 1) == 0
    assert validate_spectrum(cx.labels(), meta_for(cx)).passed


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(1, 4), min_size=2, max_size=3),
       st.lists(st.sampled_from([0.0, 0.5, 1.0, 3.0]), min_size=1, max_size=3, unique=True))
def test_synth_complex_properties(seed, dims, lams):
    cx = synth_complex(4, dims, lams, seed=seed)
    assert cx.complex_residual() < 1e-12
    labels = cx.labels()
    assert validate_spectrum(labels, meta_for(cx)).passed
    for b in cx.blocks:
        for q, V in enumerate(b.eigvecs):
            np.testing.assert_allclose(V.conj().T @ V, np.eye(len(V)), atol=1e-10)
            L = b.hodge(q)
            np.testing.assert_allclose(L, L.conj().T, atol=1e-12)
            assert np.all(b.eigvals[q] >= -1e-12)
    for lab in labels:
        if lab.q == 0:
            assert lab.gamma_bar == lab.gamma + (cx.n - 1) * lab.lam
    # the block maps stay inside their lambda block and keep the complex property
    for b in cx.blocks:
        for q in range(len(b.dims) - 2):
            assert np.abs(b.transfer(q + 1) @ b.transfer(q)).max(initial=0.0) < 1e-10


def test_kohn_rossi_zero_differential():
    cx = SpectralComplex.from_differentials(3, {0.0: ([5], [])})
    assert kohn_rossi_dim(cx, 0) == 5


def test_kohn_rossi_matches_rank_oracle(frozen):
    fx = frozen["kohn_rossi"]
    cx = SpectralComplex.from_differentials(fx["n"], {1.0: (fx["dims"], [np.array(fx["D0"]), np.array(fx["D1"])])})
    assert [kohn_rossi_dim(cx, q) for q in range(3)] == fx["cohomology"]


def test_kohn_rossi_rejects_bad_degree():
    cx = synth_complex(4, [2, 2], [0.0], seed=1)
    with pytest.raises(ValueError):
        kohn_rossi_dim(cx, 5)


def test_from_differentials_checks_shapes():
    with pytest.raises(ValueError):
        SpectralComplex.from_differentials(4, {0.0: ([2, 2], [np.zeros((3, 2))])})


@pytest.mark.parametrize("n", [3, 4, 5])
def test_sphere_stub(n):
    labels, meta, cx = sphere_stub_spectrum(n, 3)
    assert validate_spectrum(labels, meta).passed
    for q in range(1, n - 1):
        assert kohn_rossi_dim(cx, q) == 0
    assert all(float(l.lam).is_integer() for l in labels)
    assert {l.lam for l in labels} == set(float(k) for k in range(-3, 4))
