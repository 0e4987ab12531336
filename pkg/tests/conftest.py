import numpy as np
import pytest

from uqlr.basis import Density1D, UncertainSpace
from uqlr.burgers import SpatialGrid
from uqlr.dlra import DLRAContext, truncated_svd_init


class Toy:
    """Twenty cells, one uncertain dimension on [0, 1], smooth-ish shock data."""

    def __init__(self, nx=20, degree=3, nq=None, rank=None):
        self.grid = SpatialGrid(0.0, 1.0, nx)
        self.space = UncertainSpace.build(degree, (Density1D(0.0, 1.0),), nq=nq)
        xi = self.space.quad.nodes[:, 0]
        x = self.grid.centers[:, None]
        self.values = 2.0 + 0.5 * xi[None, :] + 1.5 * np.tanh((0.45 + 0.1 * xi[None, :] - x) / 0.08)
        self.boundary = (3.5 + 0.5 * xi, 0.5 + 0.5 * xi)
        self.moments = self.space.project(self.values)
        self.rank = self.space.size if rank is None else rank
        self.ctx = DLRAContext(self.space, self.grid.dx, boundary=self.boundary)
        self.dt = 0.4 * self.grid.dx / 4.0

    def state(self, rank=None):
        return truncated_svd_init(self.moments, self.rank if rank is None else rank)


@pytest.fixture
def toy():
    return Toy()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import sys
    lines = getattr(sys.modules.get("test_acceptance"), "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
