import csv
import json
import math
from dataclasses import replace

import pytest

from swarmpath.baseline import chain_length
from swarmpath.chain import SubgoalChain, validate_chain
from swarmpath.cli import main
from swarmpath.harness import (
    OUTPUT_ENV,
    REPORT_COLUMNS,
    SUITE_DIR,
    TRAJECTORY_COLUMNS,
    MetricsReport,
    ScenarioError,
    aggregate,
    compare_paths,
    export_trajectories,
    import_trajectories,
    load_scenario,
    load_suite,
    run_experiment,
    run_single,
    scenario_from_dict,
)
from swarmpath.world import ArenaSpec, Disk, Rect


# scenarios

def test_minimal_config_gets_defaults():
    cfg = scenario_from_dict({"arena": "env1_open", "robot_count": 60})
    assert cfg.max_ticks == 30000 and cfg.task_allocation_enabled and cfg.grid_resolution == 0.05
    p = cfg.controller_params()
    assert p.max_speed == 10 and p.hard_turn_angle_threshold == 90
    assert cfg.load_arena().name == "env1_open"


@pytest.mark.parametrize(
    "data,key",
    [
        ({"arena": "env1_open", "robot_count": 0}, "robot_count"),
        ({"robot_count": 5}, "arena"),
        ({"arena": "env1_open", "robot_count": 5, "controller": {"bogus": 1}}, "controller.bogus"),
        ({"arena": "env1_open", "robot_count": 5, "controller": {"max_speed": -1}}, "controller"),
        ({"arena": "nowhere", "robot_count": 5}, "arena"),
        ({"arena": "env1_open", "robot_count": 5, "colour": 1}, "colour"),
    ],
)
def test_bad_config_names_key(data, key):
    with pytest.raises(ScenarioError, match=key.replace(".", r"\.")):
        scenario_from_dict(data)


def test_parse_error(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text("{not json")
    with pytest.raises(ScenarioError, match="parse error"):
        load_scenario(f)


def test_suite_loads():
    cfgs = load_suite()
    assert len(cfgs) == 8
    assert {c.environment for c in cfgs} == {f.stem for f in SUITE_DIR.glob("*.json")}
    for c in cfgs:
        assert c.robot_counts == (60, 70, 80, 90, 100)
        c.load_arena()


# chain validation

def _arena(obstacles=()):
    return ArenaSpec(8, 4, tuple(Rect(*o) for o in obstacles), Disk((1, 2), 0.25), Disk((1.9, 2), 0.25))


def test_direct_visibility_empty_chain():
    assert validate_chain(SubgoalChain((1, 2), (1.9, 2)), _arena())


def test_gap_violation():
    a = ArenaSpec(8, 4, (), Disk((1, 2), 0.25), Disk((4, 2), 0.25))
    chk = validate_chain(SubgoalChain((1, 2), (4, 2), [(1.9, 2), (3.1, 2)]), a)
    assert not chk and [v[0] for v in chk.violations] == ["gap"]


def test_occlusion_violation():
    a = ArenaSpec(8, 4, (Rect(2.3, 1.0, 2.5, 3.0),), Disk((1, 2), 0.25), Disk((3.5, 2), 0.25))
    chk = validate_chain(SubgoalChain((1, 2), (3.5, 2), [(1.8, 2), (2.8, 1.9)]), a)
    assert not chk and ("occluded", 1) in [v[:2] for v in chk.violations]


def test_chain_ids_must_match_anchors():
    with pytest.raises(ValueError):
        SubgoalChain((0, 0), (1, 1), [(0.5, 0.5)], (1, 2))


# comparisons

def test_compare_equal():
    c = compare_paths(6.0, 6.0, 5.0)
    assert c["ratio_opt_raw"] == 1.0 and not c["anomaly"]


def test_compare_table_row():
    c = compare_paths(6.57, 5.015, 5.00)
    assert round(c["ratio_opt_astar"], 3) == 1.003
    assert round(c["ratio_opt_raw"], 3) == 0.763
    assert c["shorter_than_raw"] and not c["shorter_than_astar"]


def test_compare_flags_anomaly():
    assert compare_paths(5.0, 5.2, 4.9)["anomaly"]


# runs and reports

def test_formed_run_row(formed_run):
    row = formed_run.row
    assert row["chain_valid"] and row["alignment_monotone"]
    assert row["optimized_length"] <= row["raw_length"] + 1e-9
    assert row["resource_reduction"] == 100.0 * (row["robot_count"] - row["assigned_path"]) / row["robot_count"]
    assert row["seconds"] == pytest.approx(row["ticks"] * 0.1)
    assert row["astar_length"] >= 2.0 - 0.05


def test_no_allocation_means_no_reduction(small_config):
    row = run_single(replace(small_config, task_allocation_enabled=False), 0).row
    assert row["resource_reduction"] == 0.0 and row["assigned_path"] == row["robot_count"]


def test_report_bytes_deterministic(small_config):
    a = run_experiment(small_config, [3]).to_csv()
    b = run_experiment(small_config, [3]).to_csv()
    assert a == b
    assert a.splitlines()[0].split(",") == list(REPORT_COLUMNS)


def test_report_round_trip(tmp_path, formed_run):
    rep = MetricsReport([formed_run.row, dict(formed_run.row, seed=1, status="Timeout")])
    csv_path, side = rep.write(tmp_path / "r.csv")
    back = MetricsReport.read(csv_path)
    assert [r["seed"] for r in back.rows] == [0, 1]
    agg = json.loads(side.read_text())
    assert agg["runs"] == 2 and agg["successes"] == 1 and agg["success_rate"] == 0.5
    # aggregates recompute from the parsed rows
    assert aggregate(back.rows)["mean_resource_reduction"] == pytest.approx(agg["mean_resource_reduction"])


def test_fault_is_recorded_not_raised(small_config, monkeypatch):
    import swarmpath.harness as h

    def boom(*a, **k):
        raise RuntimeError("injected")

    monkeypatch.setattr(h, "run_until", boom)
    row = run_single(small_config, 0).row
    assert row["status"] == "Fault" and "injected" in row["fault"]


# trajectories

def test_trajectory_row_count(small_config, tmp_path):
    res = run_single(replace(small_config, robot_count=3, max_ticks=10), 0, record_trajectories=True)
    path = export_trajectories(res, tmp_path / "t.csv")
    back = import_trajectories(path)
    assert len(back.rows) == 30
    with open(path) as fh:
        assert tuple(next(csv.reader(fh))) == TRAJECTORY_COLUMNS


def test_trajectory_round_trip(formed_run, tmp_path):
    back = import_trajectories(export_trajectories(formed_run, tmp_path / "t.csv"))
    assert chain_length(back.raw_chain) == formed_run.raw_chain.length
    assert chain_length(back.optimized_chain) == formed_run.optimized_chain.length
    assert back.optimized_chain.robot_ids == formed_run.optimized_chain.robot_ids
    assert len(back.astar_points) == len(formed_run.astar.cells)


def test_unrecorded_run_refuses_export(small_config, tmp_path):
    res = run_single(replace(small_config, max_ticks=5), 0)
    with pytest.raises(ValueError):
        export_trajectories(res, tmp_path / "t.csv")


# command line

def test_cli_astar(capsys):
    from swarmpath.harness import ARENA_DIR

    assert main(["astar", "--arena", str(ARENA_DIR / "env4_obstacle.json"), "--resolution", "0.1"]) == 0
    assert "length" in capsys.readouterr().out


def test_cli_run_and_export(tmp_path, small_arena_file, capsys, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    scen = tmp_path / "s.json"
    scen.write_text(json.dumps({"arena": str(small_arena_file), "robot_count": 3, "max_ticks": 20}))
    assert main(["run", "--scenario", str(scen), "--seed", "2", "--export-traj", "traj.csv"]) == 0
    assert (tmp_path / "traj.csv").exists()
    assert "trace_hash" in capsys.readouterr().out


def test_cli_batch_and_compare(tmp_path, small_arena_file, capsys):
    suite = tmp_path / "suite"
    suite.mkdir()
    (suite / "corridor.json").write_text(
        json.dumps({"arena": str(small_arena_file), "robot_count": 10, "delta": 1.0, "max_ticks": 6000})
    )
    out = tmp_path / "rep.csv"
    assert main(["batch", "--suite", str(suite), "--seeds", "1", "--out", str(out)]) == 0
    assert out.exists() and out.with_suffix(".json").exists()
    assert main(["compare", "--report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "corridor" in text and "success_rate" in text


def test_cli_bad_scenario(tmp_path, capsys):
    f = tmp_path / "s.json"
    f.write_text(json.dumps({"arena": "env1_open", "robot_count": 0}))
    assert main(["run", "--scenario", str(f)]) == 2
    assert "robot_count" in capsys.readouterr().err


def test_nan_lengths_serialise():
    rep = MetricsReport([{c: "" for c in REPORT_COLUMNS} | {"raw_length": math.nan}])
    assert ",nan," in rep.to_csv()
