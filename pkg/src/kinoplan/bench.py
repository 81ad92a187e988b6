"""Benchmark harness: planner x strategy x query grids over seeds.

A suite file is JSON::

    {
      "name": "narrow_diff_drive",
      "environment": "../envs/narrow.json",      # relative to the suite file
      "system": {"name": "diff_drive"},           # plus any SystemModel parameter
      "controller": {"k_rho": 0.9},               # optional PoseController gains
      "roadmap": {"grid_xy": 1.0, "grid_theta": 1.5708, "t_max": 10, "radius": 5},
      "queries": [{"name": "q0", "start": [2, 2, 0], "goal": [22, 10, 0]}],
      "epsilon": 0.5,
      "strategies": ["rogue", "random", "rlg"],
      "planners": ["dirt"],
      "seeds": 10,                                # count, or an explicit list
      "budget_s": 60                              # or "max_iterations": N
    }

``run_suite`` writes ``runs.csv`` (one row per run), ``solutions.csv`` (one
row per solution improvement), ``plans.jsonl`` (best plan per run) and
``curves.json``.  Curves are recomputed from the CSVs by :func:`aggregate`,
which is pure.  In iteration-budget mode every time column is measured in
iterations, so the raw records are reproducible byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .controller import PoseController
from .core import DEFAULT_EPS, Configuration, Plan, Query
from .dynamics import SystemModel, make_system
from .environment import Environment, is_config_free, lift_config, load_environment
from .planner import PLANNERS, STRATEGIES, ExpansionStrategy, PlannerParams, check_solution, plan
from .roadmap import RoadmapParams, RoadmapWithGaps, build_roadmap, load_roadmap, save_roadmap

log = logging.getLogger(__name__)

SEED_OFFSET_VAR = "ROGUE_SEED_OFFSET"
N_GRID = 100

RUN_FIELDS = ["planner", "strategy", "query", "seed", "status", "iterations", "n_nodes",
              "budget_used", "n_solutions", "best_cost", "first_t", "error"]
SOLUTION_FIELDS = ["planner", "strategy", "query", "seed", "iteration", "t_found", "cost", "replay_ok"]


# --------------------------------------------------------------------------
# configuration


def system_from_config(cfg) -> SystemModel:
    """``cfg`` is a system name or a dict with ``name`` plus parameters."""
    if isinstance(cfg, str):
        return make_system(cfg)
    cfg = dict(cfg)
    return make_system(cfg.pop("name"), cfg)


def controller_from_config(cfg: dict | None) -> PoseController:
    cfg = dict(cfg or {})
    cfg.pop("type", None)
    return PoseController(**cfg)


def roadmap_params_from_config(cfg: dict | None) -> RoadmapParams:
    return RoadmapParams(**(cfg or {}))


def planner_params_from_config(cfg: dict | None) -> PlannerParams:
    return PlannerParams(**(cfg or {}))


def _query_from_config(q: dict, index: int, eps: float, dim_x: int) -> Query:
    start = np.asarray(q["start"], dtype=np.float64)
    if len(start) == 3:
        start = lift_config(start, dim_x)
    elif len(start) != dim_x:
        raise ValueError(f"query {index}: start must have 3 or {dim_x} entries")
    return Query(start, Configuration.from_seq(q["goal"]), float(q.get("epsilon", eps)),
                 str(q.get("name", f"q{index}")))


@dataclass(frozen=True)
class BenchmarkSuite:
    name: str
    env: Environment
    system: SystemModel
    controller: PoseController
    queries: tuple[Query, ...]
    strategies: tuple[str, ...] = ("rogue", "random", "rlg")
    planners: tuple[str, ...] = ("dirt",)
    seeds: tuple[int, ...] = tuple(range(10))
    budget_s: float | None = 60.0
    max_iterations: int | None = None
    roadmap_params: RoadmapParams = RoadmapParams()
    roadmap_file: Path | None = None
    planner_params: PlannerParams = PlannerParams()
    k: int = 5
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.queries:
            raise ValueError("suite has no queries")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("suite seeds must be distinct")
        if (self.budget_s is None) == (self.max_iterations is None):
            raise ValueError("suite needs exactly one of budget_s / max_iterations")
        for s in self.strategies:
            ExpansionStrategy(s, self.k)
        for p in self.planners:
            if p not in PLANNERS:
                raise ValueError(f"unknown planner {p!r}")
        for q in self.queries:
            if not is_config_free(q.start[:3], self.env):
                raise ValueError(f"query {q.name}: start is in collision")
            b = self.env.bounds
            if not (b[0] <= q.goal.x <= b[1] and b[2] <= q.goal.y <= b[3]):
                raise ValueError(f"query {q.name}: goal outside the workspace")

    @property
    def iteration_mode(self) -> bool:
        return self.max_iterations is not None

    @property
    def budget(self) -> float:
        return float(self.max_iterations if self.iteration_mode else self.budget_s)

    @property
    def n_runs(self) -> int:
        return len(self.planners) * len(self.strategies) * len(self.queries) * len(self.seeds)

    def config_hash(self) -> str:
        blob = json.dumps(self.source, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    def needs_roadmap(self) -> bool:
        return "rogue" in self.strategies


def suite_from_dict(data: dict, base_dir: Path | str = ".") -> BenchmarkSuite:
    base_dir = Path(base_dir)
    env = load_environment(base_dir / data["environment"])
    system = system_from_config(data.get("system", "diff_drive"))
    ctrl = controller_from_config(data.get("controller"))
    eps = float(data.get("epsilon", DEFAULT_EPS))
    queries = tuple(_query_from_config(q, i, eps, system.dim_x) for i, q in enumerate(data["queries"]))
    seeds = data.get("seeds", 10)
    seeds = tuple(range(seeds)) if isinstance(seeds, int) else tuple(int(s) for s in seeds)
    budget_s = data.get("budget_s")
    max_it = data.get("max_iterations")
    if budget_s is None and max_it is None:
        budget_s = 60.0
    rm_file = data.get("roadmap_file")
    return BenchmarkSuite(
        name=str(data.get("name", "suite")),
        env=env, system=system, controller=ctrl, queries=queries,
        strategies=tuple(data.get("strategies", ("rogue", "random", "rlg"))),
        planners=tuple(data.get("planners", ("dirt",))),
        seeds=seeds,
        budget_s=None if budget_s is None else float(budget_s),
        max_iterations=None if max_it is None else int(max_it),
        roadmap_params=roadmap_params_from_config(data.get("roadmap")),
        roadmap_file=None if rm_file is None else base_dir / rm_file,
        planner_params=planner_params_from_config(data.get("planner")),
        k=int(data.get("k", 5)),
        source=data,
    )


def load_suite(path) -> BenchmarkSuite:
    path = Path(path)
    return suite_from_dict(json.loads(path.read_text()), path.parent)


def run_seed(seed: int, query_index: int, offset: int | None = None) -> np.random.SeedSequence:
    """Seed sequence for one run; shared by every planner/strategy pair."""
    if offset is None:
        offset = int(os.environ.get(SEED_OFFSET_VAR, "0"))
    return np.random.SeedSequence([seed + offset, query_index])


# --------------------------------------------------------------------------
# execution

_WORKER: dict = {}


def _init_worker(suite: BenchmarkSuite, roadmap_path: str | None, offset: int):
    _WORKER["suite"] = suite
    _WORKER["roadmap"] = load_roadmap(roadmap_path, suite.env) if roadmap_path else None
    _WORKER["offset"] = offset


def _fmt(x: float) -> str:
    return repr(float(x))


def execute_run(suite: BenchmarkSuite, roadmap: RoadmapWithGaps | None, planner_kind: str,
                strategy: str, qi: int, seed: int, offset: int = 0) -> dict:
    """One planning run; failures are captured in the record, never raised."""
    query = suite.queries[qi]
    rec = {"planner": planner_kind, "strategy": strategy, "query": query.name, "seed": seed,
           "status": "ok", "iterations": 0, "n_nodes": 0, "budget_used": "0", "n_solutions": 0,
           "best_cost": "", "first_t": "", "error": ""}
    sols, best_plan = [], None
    try:
        rng = np.random.default_rng(run_seed(seed, qi, offset))
        res = plan(query, suite.env, suite.system, suite.controller, roadmap,
                   ExpansionStrategy(strategy, suite.k), planner_kind,
                   budget_s=suite.budget_s, max_iterations=suite.max_iterations,
                   params=suite.planner_params, rng=rng)
        rec["iterations"] = res.iterations
        rec["n_nodes"] = res.n_nodes
        rec["budget_used"] = str(res.iterations) if suite.iteration_mode else _fmt(res.elapsed)
        for s in res.solutions:
            ok, _ = check_solution(query, s.plan, suite.env, suite.system)
            t = float(s.iteration) if suite.iteration_mode else s.time_found
            sols.append({"planner": planner_kind, "strategy": strategy, "query": query.name,
                         "seed": seed, "iteration": s.iteration, "t_found": _fmt(t),
                         "cost": _fmt(s.cost), "replay_ok": int(ok)})
        if res.solutions:
            rec["n_solutions"] = len(res.solutions)
            rec["best_cost"] = _fmt(res.solutions[-1].cost)
            rec["first_t"] = sols[0]["t_found"]
            best_plan = res.solutions[-1].plan.to_dict()
        if res.warnings:
            rec["error"] = "; ".join(res.warnings)
    except Exception as exc:  # a failed run must not abort the suite
        log.exception("run failed")
        rec["status"] = "error"
        rec["error"] = f"{type(exc).__name__}: {exc}"
    return {"run": rec, "solutions": sols, "plan": best_plan}


def _worker_run(job):
    s = _WORKER["suite"]
    return execute_run(s, _WORKER["roadmap"], *job, offset=_WORKER["offset"])


def prepare_suite_roadmap(suite: BenchmarkSuite, out_dir: Path) -> Path | None:
    """Load the suite's roadmap file, or build one into ``out_dir``."""
    if not suite.needs_roadmap():
        return None
    if suite.roadmap_file is not None:
        load_roadmap(suite.roadmap_file, suite.env)  # validates the hash
        return suite.roadmap_file
    path = out_dir / "roadmap.rm"
    rm = build_roadmap(suite.env, suite.controller, suite.system, suite.roadmap_params,
                       query_milestones(suite))
    save_roadmap(rm, path)
    return path


def query_milestones(suite: BenchmarkSuite) -> list[tuple[float, float, float]]:
    """Start and goal configurations of every query, added to the roadmap at build time."""
    out = []
    for q in suite.queries:
        out.append(tuple(float(v) for v in q.start[:3]))
        out.append(tuple(q.goal))
    return out


def _jobs(suite: BenchmarkSuite):
    for p in suite.planners:
        for s in suite.strategies:
            for qi in range(len(suite.queries)):
                for seed in suite.seeds:
                    yield (p, s, qi, seed)


def _write_csv(path: Path, fields, rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    path.write_text(buf.getvalue())


def run_suite(suite: BenchmarkSuite, out_dir, jobs: int = 1, roadmap_path=None) -> dict:
    """Execute every run and write raw records plus aggregated curves.

    Returns the curves dictionary that is also written to ``curves.json``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    offset = int(os.environ.get(SEED_OFFSET_VAR, "0"))
    if roadmap_path is None:
        roadmap_path = prepare_suite_roadmap(suite, out_dir)
    work = list(_jobs(suite))
    if jobs <= 1:
        _init_worker(suite, str(roadmap_path) if roadmap_path else None, offset)
        results = [_worker_run(j) for j in work]
    else:
        with ProcessPoolExecutor(jobs, initializer=_init_worker,
                                 initargs=(suite, str(roadmap_path) if roadmap_path else None, offset)) as ex:
            results = list(ex.map(_worker_run, work))

    runs = [r["run"] for r in results]
    sols = [s for r in results for s in r["solutions"]]
    _write_csv(out_dir / "runs.csv", RUN_FIELDS, runs)
    _write_csv(out_dir / "solutions.csv", SOLUTION_FIELDS, sols)
    with open(out_dir / "plans.jsonl", "w") as fh:
        for r in results:
            if r["plan"] is not None:
                row = {k: r["run"][k] for k in ("planner", "strategy", "query", "seed")}
                row["plan"] = r["plan"]
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    meta = suite_metadata(suite, offset)
    curves = aggregate(read_records(out_dir / "runs.csv"), read_records(out_dir / "solutions.csv"),
                       time_grid(suite.budget, suite.iteration_mode), meta)
    write_curves(curves, out_dir / "curves.json")
    return curves


def suite_metadata(suite: BenchmarkSuite, offset: int = 0) -> dict:
    from . import __version__

    return {
        "suite": suite.name,
        "config_hash": suite.config_hash(),
        "version": __version__,
        "budget": suite.budget,
        "time_unit": "iterations" if suite.iteration_mode else "s",
        "seeds": list(suite.seeds),
        "seed_offset": offset,
        "queries": [q.name for q in suite.queries],
        "system": suite.system.name,
    }


# --------------------------------------------------------------------------
# metrics (pure functions of the raw records)


def time_grid(budget: float, iteration_mode: bool = False, n: int = N_GRID) -> np.ndarray:
    """Log-spaced evaluation times from 0.1 s (or 1 iteration) to ``budget``."""
    lo = 1.0 if iteration_mode else 0.1
    if budget <= lo:
        return np.full(n, float(budget))
    return np.geomspace(lo, budget, n)


def read_records(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def normalize_costs(costs: dict) -> dict:
    """Divide each query's costs by that query's best cost.

    ``costs`` maps query -> sequence of costs (all planners, seeds and
    times).  Queries without any cost are left out.
    """
    out = {}
    for q, cs in costs.items():
        cs = [float(c) for c in cs]
        if not cs:
            continue
        best = min(cs)
        if not best > 0:
            raise ValueError(f"query {q}: non-positive best cost")
        out[q] = [1.0 if c == best else c / best for c in cs]
    return out


@dataclass(frozen=True)
class MetricSeries:
    times: np.ndarray
    success_ratio: np.ndarray
    mean_normalized_cost: np.ndarray  # NaN where nothing is solved yet

    def to_dict(self) -> dict:
        return {
            "times": [float(t) for t in self.times],
            "success_ratio": [float(s) for s in self.success_ratio],
            "mean_normalized_cost": [None if math.isnan(c) else float(c) for c in self.mean_normalized_cost],
        }

    def at(self, t: float) -> tuple[float, float]:
        """(success ratio, mean normalized cost) at the last grid time <= t."""
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        if i < 0:
            return 0.0, math.nan
        return float(self.success_ratio[i]), float(self.mean_normalized_cost[i])


def _group_key(r: dict) -> str:
    return f"{r['planner']}-{r['strategy']}"


def aggregate(runs: list[dict], solutions: list[dict], times, meta: dict | None = None) -> dict:
    """Success-ratio and normalized-cost curves per (planner, strategy).

    Only solutions whose plan replayed successfully are counted.  The result
    does not depend on record order.
    """
    times = np.asarray(times, dtype=np.float64)
    valid = [s for s in solutions if int(s["replay_ok"]) == 1]
    by_query: dict[str, list[float]] = {}
    for s in valid:
        by_query.setdefault(s["query"], []).append(float(s["cost"]))
    best = {q: min(cs) for q, cs in by_query.items()}

    # per run: sorted (t, cost) improvements
    traces: dict[tuple, list[tuple[float, float]]] = {}
    for s in valid:
        key = (_group_key(s), s["query"], str(s["seed"]))
        traces.setdefault(key, []).append((float(s["t_found"]), float(s["cost"])))
    groups: dict[str, list[tuple]] = {}
    for r in runs:
        groups.setdefault(_group_key(r), []).append((r["query"], str(r["seed"])))

    series = {}
    for g in sorted(groups):
        members = sorted(groups[g])
        solved = np.zeros(len(times))
        cost_sum = np.zeros(len(times))
        for q, seed in members:
            tr = sorted(traces.get((g, q, seed), []))
            if not tr:
                continue
            ts = np.array([t for t, _ in tr])
            cs = np.minimum.accumulate(np.array([c for _, c in tr]))
            idx = np.searchsorted(ts, times, side="right") - 1
            has = idx >= 0
            solved += has
            cost_sum[has] += cs[idx[has]] / best[q]
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.where(solved > 0, cost_sum / np.maximum(solved, 1), np.nan)
        series[g] = MetricSeries(times, solved / len(members), mean).to_dict()
        series[g]["n_runs"] = len(members)
        series[g]["final_success_ratio"] = sum(1 for q, s in members if (g, q, s) in traces) / len(members)
    return {"meta": meta or {}, "best_cost": {q: best[q] for q in sorted(best)}, "series": series,
            "replay_failures": sum(1 for s in solutions if int(s["replay_ok"]) != 1)}


def write_curves(curves: dict, path) -> None:
    Path(path).write_text(json.dumps(curves, indent=1, sort_keys=True) + "\n")


def reaggregate(out_dir) -> dict:
    """Recompute curves from ``runs.csv``/``solutions.csv`` in ``out_dir``."""
    out_dir = Path(out_dir)
    meta = json.loads((out_dir / "curves.json").read_text())["meta"]
    times = time_grid(meta["budget"], meta["time_unit"] == "iterations")
    return aggregate(read_records(out_dir / "runs.csv"), read_records(out_dir / "solutions.csv"), times, meta)


def series_of(curves: dict, planner: str, strategy: str) -> MetricSeries:
    d = curves["series"][f"{planner}-{strategy}"]
    cost = np.array([math.nan if c is None else c for c in d["mean_normalized_cost"]])
    return MetricSeries(np.array(d["times"]), np.array(d["success_ratio"]), cost)


def load_plans(out_dir) -> list[dict]:
    rows = []
    with open(Path(out_dir) / "plans.jsonl") as fh:
        for line in fh:
            row = json.loads(line)
            row["plan"] = Plan.from_dict(row["plan"])
            rows.append(row)
    return rows


def with_roadmap_params(suite: BenchmarkSuite, **changes) -> BenchmarkSuite:
    """Copy of ``suite`` with modified roadmap parameters (for ablations)."""
    src = dict(suite.source)
    src["roadmap"] = {**src.get("roadmap", {}), **changes}
    return replace(suite, roadmap_params=replace(suite.roadmap_params, **changes), roadmap_file=None,
                   source=src)


__all__ = [
    "BenchmarkSuite", "MetricSeries", "STRATEGIES", "aggregate", "execute_run", "load_suite",
    "normalize_costs", "reaggregate", "run_suite", "series_of", "suite_from_dict", "time_grid",
]
