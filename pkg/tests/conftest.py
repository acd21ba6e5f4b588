import json
from pathlib import Path

import numpy as np
import pytest

from dbarlab.hyperbolic import DomainSpec
from dbarlab.mesh import build_mesh
from dbarlab.solver import function_space
from dbarlab.spectrum import synth_complex

ORACLES = Path(__file__).parent / "oracles" / "frozen.json"

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[tuple[int, str], str] = {}


@pytest.fixture(scope="session")
def frozen():
    return json.loads(ORACLES.read_text())


@pytest.fixture(scope="session")
def disc():
    return DomainSpec.disc(2j, 1.0)


@pytest.fixture(scope="session")
def coarse_mesh(disc):
    return build_mesh(disc, 0.1)


@pytest.fixture(scope="session")
def coarse_space(coarse_mesh):
    return function_space(coarse_mesh)


@pytest.fixture(scope="session")
def synth():
    return synth_complex(4, [2, 3, 2], [0.0, 1.0, 2.5], seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
