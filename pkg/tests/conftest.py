import numpy as np
import pytest

from evonav.mapgen import open_arena
from evonav.worldmodel import OccupancyGrid


def box_grid(w=40, h=40, res=0.1):
    """Walled rectangle of w x h cells with a free interior."""
    occ = np.ones((h, w), dtype=bool)
    occ[1:-1, 1:-1] = False
    return OccupancyGrid(occ, res)


@pytest.fixture
def arena():
    return open_arena(10.0)[0]


@pytest.fixture
def small_box():
    return box_grid()


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
