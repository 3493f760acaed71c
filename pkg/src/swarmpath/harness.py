"""Scenario files, batch experiments, metric reports and trajectory export."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .agent import ControllerParams, RobotState, Role
from .baseline import GridPath, NoPath, arena_astar
from .chain import SubgoalChain, validate_chain
from .sim import SimParams, Status, build_world, run_until, trace_hash
from .world import ArenaSpec, load_arena

log = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"
ARENA_DIR = DATA_DIR / "arenas"
SUITE_DIR = DATA_DIR / "suite"
OUTPUT_ENV = "SWARMPATH_OUTPUT_DIR"

# controller keys a scenario file may set
CONTROLLER_KEYS = (
    "go_straight_angle_range",
    "delta",
    "minimum_resting_time",
    "initial_exploring_time",
    "minimum_search_for_place_in_nest",
    "hard_turn_angle_threshold",
    "soft_turn_angle_threshold",
    "no_turn_angle_threshold",
    "max_speed",
)
TRAJECTORY_COLUMNS = ("tick", "robot_id", "x", "y", "heading", "state", "led")


class ScenarioError(ValueError):
    """A scenario file that does not parse or breaks a constraint."""


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "."))


@dataclass(frozen=True)
class ScenarioConfig:
    arena: str
    robot_count: int
    seed: int = 0
    controller: dict = field(default_factory=dict)
    task_allocation_enabled: bool = True
    delta: float = 2.0
    max_ticks: int = 30000
    grid_resolution: float = 0.05
    robot_counts: tuple = ()
    name: str = ""
    base_dir: str = ""

    def __post_init__(self):
        if self.robot_count <= 0:
            raise ScenarioError("robot_count: must be positive")
        if any(c <= 0 for c in self.robot_counts):
            raise ScenarioError("robot_counts: every entry must be positive")
        if self.max_ticks <= 0:
            raise ScenarioError("max_ticks: must be positive")
        if self.grid_resolution <= 0:
            raise ScenarioError("grid_resolution: must be positive")
        if self.delta < 0:
            raise ScenarioError("delta: must be non-negative")
        unknown = set(self.controller) - set(CONTROLLER_KEYS)
        if unknown:
            raise ScenarioError(f"controller.{sorted(unknown)[0]}: unknown parameter")

    @property
    def environment(self) -> str:
        return self.name or Path(self.arena).stem

    def arena_path(self) -> Path:
        p = Path(self.arena)
        if p.is_absolute() and p.exists():
            return p
        for base in (Path(self.base_dir) if self.base_dir else None, ARENA_DIR):
            if base is None:
                continue
            for cand in (base / p, base / f"{p}.json"):
                if cand.exists():
                    return cand
        if p.exists():
            return p
        raise ScenarioError(f"arena: file {self.arena!r} not found")

    def load_arena(self) -> ArenaSpec:
        try:
            return load_arena(self.arena_path())
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"arena: {exc}") from exc

    def controller_params(self) -> ControllerParams:
        return ControllerParams(
            **self.controller,
            task_allocation=self.task_allocation_enabled,
            complexity_delta=self.delta,
        )

    def count_for(self, index: int) -> int:
        """Swarm size of the ``index``-th run of a sweep."""
        if self.robot_counts:
            return self.robot_counts[index % len(self.robot_counts)]
        return self.robot_count


def scenario_from_dict(data: dict, base_dir: str = "") -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ScenarioError("<root>: expected an object")
    known = {f.name for f in fields(ScenarioConfig)} - {"base_dir"}
    extra = set(data) - known
    if extra:
        raise ScenarioError(f"{sorted(extra)[0]}: unknown key")
    if "arena" not in data:
        raise ScenarioError("arena: required")
    counts = tuple(int(c) for c in data.get("robot_counts", ()))
    if "robot_count" not in data and not counts:
        raise ScenarioError("robot_count: required")
    try:
        cfg = ScenarioConfig(
            arena=str(data["arena"]),
            robot_count=int(data.get("robot_count", counts[0] if counts else 0)),
            seed=int(data.get("seed", 0)),
            controller=dict(data.get("controller", {})),
            task_allocation_enabled=bool(data.get("task_allocation_enabled", True)),
            delta=float(data.get("delta", 2.0)),
            max_ticks=int(data.get("max_ticks", 30000)),
            grid_resolution=float(data.get("grid_resolution", 0.05)),
            robot_counts=counts,
            name=str(data.get("name", "")),
            base_dir=base_dir,
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from exc
    try:
        cfg.controller_params()
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"controller: {exc}") from exc
    cfg.load_arena()
    return cfg


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"<root>: parse error at line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_dict(data, str(path.parent))


def load_suite(directory=SUITE_DIR) -> list[ScenarioConfig]:
    files = sorted(Path(directory).glob("*.json"))
    if not files:
        raise ScenarioError(f"no scenario files in {directory}")
    return [load_scenario(f) for f in files]


# --------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    row: dict
    state: object = None
    raw_chain: SubgoalChain | None = None
    optimized_chain: SubgoalChain | None = None
    astar: GridPath | None = None
    alignment_traces: list = field(default_factory=list)


def _monotone(trace, tol: float = 1e-9) -> bool:
    return all(b <= a + tol for a, b in zip(trace, trace[1:]))


def _length(x) -> float:
    if x is None:
        return math.nan
    if isinstance(x, (int, float)):
        return float(x)
    return float(x.length)


def compare_paths(raw, optimized, astar) -> dict:
    """Lengths and ratios for one successful run; arguments may be paths or lengths."""
    lr, lo, la = _length(raw), _length(optimized), _length(astar)
    return {
        "raw_length": lr,
        "optimized_length": lo,
        "astar_length": la,
        "ratio_opt_astar": lo / la if la > 0 else math.nan,
        "ratio_opt_raw": lo / lr if lr > 0 else math.nan,
        "shorter_than_astar": lo < la,
        "shorter_than_raw": lo < lr,
        "anomaly": lr < lo - 1e-9,
    }


def run_single(
    config: ScenarioConfig,
    seed: int,
    robot_count: int | None = None,
    *,
    workers: int = 1,
    record_trajectories: bool = False,
    astar_path: GridPath | None = None,
) -> RunResult:
    """One simulation plus its baseline comparison."""
    arena = config.load_arena()
    n = robot_count or config.robot_count
    params = SimParams(
        controller=config.controller_params(),
        workers=workers,
        record_trajectories=record_trajectories,
    )
    row = {
        "environment": config.environment,
        "seed": seed,
        "robot_count": n,
        "task_allocation": config.task_allocation_enabled,
        "status": "",
        "ticks": 0,
        "seconds": 0.0,
        "raw_length": math.nan,
        "optimized_length": math.nan,
        "astar_length": math.nan,
        "n_required": -1,
        "assigned_path": n,
        "resting": 0,
        "resource_reduction": 0.0,
        "chain_robots": 0,
        "chain_valid": False,
        "alignment_monotone": True,
        "trace_hash": "",
        "fault": "",
    }
    if astar_path is None:
        try:
            astar_path = arena_astar(arena, config.grid_resolution, params.robot_radius)
        except NoPath:
            astar_path = None
    if astar_path is not None:
        row["astar_length"] = astar_path.length
    result = RunResult(row, astar=astar_path)
    try:
        state = build_world(arena, n, seed, params)
        outcome = run_until(state, params, config.max_ticks)
    except Exception as exc:  # recorded, the batch carries on
        log.exception("run %s seed %s failed", config.environment, seed)
        row["status"] = "Fault"
        row["fault"] = f"{type(exc).__name__}: {exc}"
        return result
    result.state = state
    row["status"] = outcome.status.value
    row["ticks"] = outcome.ticks_elapsed
    row["seconds"] = round(outcome.ticks_elapsed * params.controller.tick_seconds, 6)
    row["trace_hash"] = f"{trace_hash(state.event_log):016x}"
    if config.task_allocation_enabled and state.allocation is not None:
        row["n_required"] = state.allocation.n_required
        path_ids = set(state.allocation.assigned_path)
        if state.founder_id is not None:
            path_ids.add(state.founder_id)
        row["assigned_path"] = len(path_ids)
    elif config.task_allocation_enabled:
        # allocation never ran: every robot is still in play
        row["assigned_path"] = n
    row["resting"] = sum(1 for r in state.robots if r.role is Role.REST)
    row["resource_reduction"] = 100.0 * (n - row["assigned_path"]) / n
    if outcome.status is Status.PATH_FORMED:
        ids = outcome.chain_ids
        robots = [state.robot(i) for i in ids]
        result.raw_chain = SubgoalChain.from_arena(arena, [r.anchored_pos for r in robots], ids)
        result.optimized_chain = SubgoalChain.from_arena(arena, [(r.x, r.y) for r in robots], ids)
        result.alignment_traces = [list(r.alignment_trace) for r in robots]
        row["raw_length"] = result.raw_chain.length
        row["optimized_length"] = result.optimized_chain.length
        row["chain_robots"] = len(ids)
        raw_ok = validate_chain(result.raw_chain, arena)
        opt_ok = validate_chain(result.optimized_chain, arena)
        row["chain_valid"] = bool(raw_ok and opt_ok)
        if not row["chain_valid"]:
            row["fault"] = f"invalid chain: {raw_ok.violations + opt_ok.violations}"
        row["alignment_monotone"] = all(_monotone(t) for t in result.alignment_traces)
    # every alignment trace, chain member or not
    all_traces = [r.alignment_trace for r in state.robots if r.alignment_trace]
    if not all(_monotone(t) for t in all_traces):
        row["alignment_monotone"] = False
    return result


REPORT_COLUMNS = (
    "environment",
    "seed",
    "robot_count",
    "task_allocation",
    "status",
    "ticks",
    "seconds",
    "raw_length",
    "optimized_length",
    "astar_length",
    "n_required",
    "assigned_path",
    "resting",
    "resource_reduction",
    "chain_robots",
    "chain_valid",
    "alignment_monotone",
    "trace_hash",
    "fault",
)


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)

    @property
    def aggregates(self) -> dict:
        return aggregate(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in REPORT_COLUMNS])
        return buf.getvalue()

    def write(self, path) -> tuple[Path, Path]:
        """Write the CSV and its ``.json`` aggregate sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        side = path.with_suffix(".json")
        side.write_text(json.dumps(_clean(self.aggregates), indent=2, sort_keys=True) + "\n")
        return path, side

    @classmethod
    def read(cls, path) -> "MetricsReport":
        with open(path, newline="") as fh:
            rows = [_parse_row(r) for r in csv.DictReader(fh)]
        return cls(rows)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


_INT_COLS = {"seed", "robot_count", "ticks", "n_required", "assigned_path", "resting", "chain_robots"}
_FLOAT_COLS = {"seconds", "raw_length", "optimized_length", "astar_length", "resource_reduction"}
_BOOL_COLS = {"task_allocation", "chain_valid", "alignment_monotone"}


def _parse_row(r: dict) -> dict:
    out = {}
    for k, v in r.items():
        if k in _INT_COLS:
            out[k] = int(v)
        elif k in _FLOAT_COLS:
            out[k] = float(v)
        elif k in _BOOL_COLS:
            out[k] = v == "true"
        else:
            out[k] = v
    return out


def _clean(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    return obj


def _mean(xs) -> float:
    xs = list(xs)
    return sum(xs) / len(xs) if xs else math.nan


def aggregate(rows) -> dict:
    """Headline statistics; a pure function of the rows."""
    ok = [r for r in rows if r["status"] == Status.PATH_FORMED.value]
    with_astar = [r for r in ok if not math.isnan(r["astar_length"])]
    return {
        "runs": len(rows),
        "successes": len(ok),
        "success_rate": len(ok) / len(rows) if rows else math.nan,
        "mean_resource_reduction": round(_mean(r["resource_reduction"] for r in ok), 6),
        "all_assigned_below_count": all(r["assigned_path"] < r["robot_count"] for r in ok),
        "fraction_optimized_not_longer_than_raw": _mean(
            float(r["optimized_length"] <= r["raw_length"] + 1e-9) for r in ok
        ),
        "fraction_optimized_shorter_than_raw": _mean(float(r["optimized_length"] < r["raw_length"]) for r in ok),
        "fraction_optimized_shorter_than_astar": _mean(
            float(r["optimized_length"] < r["astar_length"]) for r in with_astar
        ),
        "all_chains_valid": all(r["chain_valid"] for r in ok),
        "all_alignment_monotone": all(r["alignment_monotone"] for r in rows),
        "mean_ticks_successful": round(_mean(r["ticks"] for r in ok), 6),
        "faults": sum(1 for r in rows if r["status"] == "Fault"),
    }


def run_experiment(config: ScenarioConfig, seeds, *, workers: int = 1, progress=None) -> MetricsReport:
    """One row per seed; the ``k``-th seed uses the ``k``-th swarm size of the sweep."""
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    arena = config.load_arena()
    try:
        astar_path = arena_astar(arena, config.grid_resolution, config.controller_params().robot_radius)
    except NoPath:
        astar_path = None
    rows = []
    for k, seed in enumerate(seeds):
        res = run_single(config, seed, config.count_for(k), workers=workers, astar_path=astar_path)
        rows.append(res.row)
        if progress is not None:
            progress(res)
    return MetricsReport(rows)


def run_suite(configs, seeds_per_env: int, *, workers: int = 1, progress=None) -> MetricsReport:
    rows = []
    for cfg in configs:
        seeds = [cfg.seed + k for k in range(seeds_per_env)]
        rows.extend(run_experiment(cfg, seeds, workers=workers, progress=progress).rows)
    rows.sort(key=lambda r: (r["environment"], r["seed"]))
    return MetricsReport(rows)


# --------------------------------------------------------------------------
# trajectories


def export_trajectories(run: RunResult, path) -> Path:
    """Per-tick poses, then the chains and the A* path as separate sections."""
    if run.state is None:
        raise ValueError("run has no simulation state")
    if not run.state.trajectory:
        raise ValueError("run was not recorded; pass record_trajectories=True")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for t, rid, x, y, h, st, led in run.state.trajectory:
            w.writerow([t, rid, repr(x), repr(y), repr(h), st, led])
        for label, chain in (("raw_chain", run.raw_chain), ("optimized_chain", run.optimized_chain)):
            fh.write(f"# {label}\n")
            w.writerow(("index", "robot_id", "x", "y"))
            if chain is None:
                continue
            ids = (-1, *chain.robot_ids, -2) if chain.robot_ids else (-1,) + (0,) * len(chain.anchors) + (-2,)
            for k, (p, rid) in enumerate(zip(chain.points(), ids)):
                w.writerow([k, rid, repr(float(p[0])), repr(float(p[1]))])
        fh.write("# astar\n")
        w.writerow(("index", "x", "y"))
        if run.astar is not None:
            for k, (x, y) in enumerate(run.astar.points()):
                w.writerow([k, repr(x), repr(y)])
    return path


@dataclass
class TrajectoryFile:
    rows: list
    raw_chain: SubgoalChain | None
    optimized_chain: SubgoalChain | None
    astar_points: list


def import_trajectories(path) -> TrajectoryFile:
    sections: dict[str, list] = {"trajectory": []}
    current = "trajectory"
    with open(path, newline="") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                current = line[2:]
                sections[current] = []
            elif line:
                sections[current].append(line)
    traj = list(csv.reader(sections["trajectory"]))
    if tuple(traj[0]) != TRAJECTORY_COLUMNS:
        raise ValueError("unexpected trajectory header")
    rows = [
        (int(t), int(r), float(x), float(y), float(h), st, led) for t, r, x, y, h, st, led in traj[1:]
    ]

    def chain(label):
        body = list(csv.reader(sections.get(label, [])))[1:]
        if not body:
            return None
        pts = [(float(x), float(y)) for _, _, x, y in body]
        ids = [int(r) for _, r, _, _ in body[1:-1]]
        return SubgoalChain(pts[0], pts[-1], tuple(pts[1:-1]), tuple(ids))

    astar_pts = [(float(x), float(y)) for _, x, y in list(csv.reader(sections.get("astar", [])))[1:]]
    return TrajectoryFile(rows, chain("raw_chain"), chain("optimized_chain"), astar_pts)
