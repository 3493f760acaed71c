from pathlib import Path

import pytest

from swarmpath.harness import run_single, scenario_from_dict

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def small_arena_file():
    return DATA / "corridor.json"


@pytest.fixture(scope="session")
def small_config(small_arena_file):
    return scenario_from_dict({"arena": str(small_arena_file), "robot_count": 10, "delta": 1.0, "max_ticks": 6000})


@pytest.fixture(scope="session")
def formed_run(small_config):
    res = run_single(small_config, 0, record_trajectories=True)
    assert res.row["status"] == "PathFormed"
    return res


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
