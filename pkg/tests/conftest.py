import numpy as np
import pytest

from tigames.core import TimeGrid
from tigames.lq import LQParams
from tigames.nplayer import solve_nplayer
from tigames.presets import ex1_spec
from tigames.rng import RngSpec


@pytest.fixture(scope="session")
def small_ex1():
    """A reduced-budget solve shared by the N-player unit tests."""
    p = LQParams(gamma=0.5)
    spec = ex1_spec(p)
    grid = TimeGrid(1.0, 20)
    sol = solve_nplayer(spec, grid, 4096, rng=RngSpec(11), fixed_point_paths=1024)
    return p, spec, sol


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion; echoed in the terminal summary."""
    lines = []
    request.config._acceptance_lines = lines
    return lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
