import numpy as np
import pytest

from hilbertsphere import Grid, SpherePoint, TangentVector


def random_point(rng, grid):
    return SpherePoint.from_coords(grid, rng.standard_normal(grid.size))


def random_tangent(rng, p, norm=None):
    v = TangentVector.from_coords(p, rng.standard_normal(p.grid.size))
    if norm is not None:
        v = v * (norm / v.norm())
    return v


@pytest.fixture
def grid():
    return Grid.uniform(101)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
