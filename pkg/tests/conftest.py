import json
from pathlib import Path

import pytest

from drifthom.cell import generate_admissible_drift, make_coefficients
from drifthom.geometry import build_cell_geometry
from drifthom.tensors import effective_tensors

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture(name):
    return json.loads((FIXTURES / name).read_text())


@pytest.fixture(scope="session")
def geom96():
    return build_cell_geometry(96)


@pytest.fixture(scope="session")
def drift96(geom96):
    return make_coefficients(geom96, drift=generate_admissible_drift(geom96))


@pytest.fixture(scope="session")
def plain96(geom96):
    return make_coefficients(geom96)


@pytest.fixture(scope="session")
def tensors_drift96(geom96, drift96):
    return effective_tensors(geom96, drift96, 1.0)


@pytest.fixture(scope="session")
def tensors_plain96(geom96, plain96):
    return effective_tensors(geom96, plain96, 0.0)


@pytest.fixture(scope="session")
def oracle_fixture():
    return load_fixture("oracle_default.json")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("]")[1].split(".")[0])):
            terminalreporter.write_line(line)
