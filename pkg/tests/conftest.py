import numpy as np
import pytest
import sympy

from ddr_divdiv.ddr_full import FullComplex
from ddr_divdiv.mesh import build_mesh, family_mesh
from ddr_divdiv.serendipity import SerendipityComplex

X, Y = sympy.symbols("x y")

_CACHE = {}


def complex_for(family, n, k, serendipity=False, theta_min=0.1):
    key = (family, n, k)
    if key not in _CACHE:
        _CACHE[key] = FullComplex(family_mesh(family, n), k)
    cx = _CACHE[key]
    if not serendipity:
        return cx
    skey = key + (theta_min,)
    if skey not in _CACHE:
        _CACHE[skey] = SerendipityComplex(cx, theta_min)
    return cx, _CACHE[skey]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def two_triangles():
    return build_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    """Record a one-line verdict that is echoed at the end of the run, then printed immediately."""
    def record(text):
        ACCEPTANCE_LINES.append(text)
        print(text)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
