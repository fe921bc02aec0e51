import numpy as np
import pytest

from ntdfocus.medium import reference_profile, unit_profile
from ntdfocus.signals import TimeGrid
from ntdfocus.wave_forward import SolverGrid, build_ntd

T = 2.0


@pytest.fixture(scope="session")
def ref_profile():
    return reference_profile()


@pytest.fixture(scope="session")
def flat_profile():
    return unit_profile()


@pytest.fixture(scope="session")
def coarse_grid():
    """A cheap solver grid (CFL 0.45 at c = 1.4) for unit tests."""
    return SolverGrid.reference(n_x=2048, n_t=8192)


@pytest.fixture(scope="session")
def tgrid64():
    return TimeGrid(64, T)


@pytest.fixture(scope="session")
def ntd64(ref_profile, tgrid64, coarse_grid):
    return build_ntd(ref_profile, tgrid64, coarse_grid)


@pytest.fixture(scope="session")
def ntd64_flat(flat_profile, tgrid64, coarse_grid):
    return build_ntd(flat_profile, tgrid64, coarse_grid)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting -------------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(k, passed, detail)`` records and prints one PASS/FAIL line."""
    def record(k: int, passed: bool, detail: str) -> bool:
        line = f"CRITERION {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[k] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
