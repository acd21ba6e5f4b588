"""The frozen reference values must be reproducible from the oracle script."""
import importlib.util
import math
from pathlib import Path

import pytest

pytest.importorskip("sympy")
pytest.importorskip("mpmath")

SCRIPT = Path(__file__).parent / "oracles" / "generate.py"


@pytest.fixture(scope="module")
def oracle():
    spec = importlib.util.spec_from_file_location("oracle_generate", SCRIPT)
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    return mod


def assert_close(a, b, path="root"):
    if isinstance(b, dict):
        assert set(a) == set(b), path
        for k in b:
            assert_close(a[k], b[k], f"{path}.{k}")
    elif isinstance(b, (list, tuple)):
        assert len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            assert_close(x, y, f"{path}[{i}]")
    elif isinstance(b, bool) or isinstance(b, int) and not isinstance(a, float):
        assert a == b, path
    else:
        assert math.isclose(float(a), float(b), rel_tol=1e-9, abs_tol=1e-12), path


@pytest.mark.parametrize("key, fn", [
    ("distance_i_4i", "distance_i_4i"),
    ("pushforward", "pushforward_factors"),
    ("collar_point", "collar_point"),
    ("p_operators", "p_operators"),
    ("fundamental", "fundamental_values"),
    ("adjoint_nu2", "adjoint_nu2_values"),
    ("shift_constant", "shift_constants"),
    ("kohn_rossi", "kohn_rossi_fixture"),
    ("noncompact_gram", "noncompact_gram_entries"),
    ("disc_ratios", "disc_ratios"),
    ("negreg_collars", "negreg_collars"),
])
def test_frozen_value_reproduces(oracle, frozen, key, fn):
    assert_close(getattr(oracle, fn)(), frozen[key], key)


def test_symbolic_values_reproduce(oracle, frozen):
    sym = oracle.symbolic_identities()
    sym["W_minus_log"] = float(sym["W_minus_log"])
    assert_close(sym, frozen["symbolic"], "symbolic")
