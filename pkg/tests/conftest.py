"""Shared fixtures: generated grid scenarios and hypothesis defaults.

Scenario fixtures are session-scoped; engines constructed from them must
not mutate the files (engines never do).
"""

import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

# make tests/oracles importable (independent oracle implementations)
sys.path.insert(0, str(Path(__file__).resolve().parent))

from trafficsim.grid import GridParams, write_grid_scenario  # noqa: E402

# jit warmup blows any per-example deadline on first runs
settings.register_profile(
    "repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def grid1(tmp_path_factory):
    """Signalized 1x1 grid, one lane per road, 300 veh/h straight flows."""
    out = tmp_path_factory.mktemp("grid1")
    return write_grid_scenario(str(out), 1, 1, 300.0)


@pytest.fixture(scope="session")
def grid1_net(grid1):
    from trafficsim.roadnet import parse_roadnet_file
    return parse_roadnet_file(grid1["roadnet"])


@pytest.fixture(scope="session")
def grid2_lanes2(tmp_path_factory):
    """2x2 grid with 2 lanes per road (lane changing enabled)."""
    out = tmp_path_factory.mktemp("grid2_lanes2")
    return write_grid_scenario(str(out), 2, 2, 200.0,
                               GridParams(lanes_per_road=2),
                               turn_volume=100.0)
