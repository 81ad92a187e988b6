"""Command-line entry point: ``build-roadmap``, ``plan`` and ``bench``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import (controller_from_config, load_suite, planner_params_from_config,
                    roadmap_params_from_config, run_suite, system_from_config)
from .core import DEFAULT_EPS, Configuration, Query
from .environment import EnvironmentFileError, lift_config, load_environment
from .planner import PLANNERS, STRATEGIES, ExpansionStrategy, check_solution, plan
from .roadmap import RoadmapError, build_roadmap, load_roadmap, save_roadmap


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _load_config(path) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def _system(args, cfg):
    sys_cfg = cfg.get("system", {})
    if isinstance(sys_cfg, str):
        sys_cfg = {"name": sys_cfg}
    sys_cfg = {**sys_cfg, "name": args.system}
    return system_from_config(sys_cfg)


def cmd_build_roadmap(args) -> int:
    cfg = _load_config(args.config)
    env = load_environment(args.env)
    system = _system(args, cfg)
    ctrl = controller_from_config(cfg.get("controller"))
    rp = dict(cfg.get("roadmap", {}))
    for key, val in (("grid_xy", args.grid), ("grid_theta", args.grid_theta), ("t_max", args.tmax),
                     ("radius", args.radius), ("eps", args.eps)):
        if val is not None:
            rp[key] = val
    rm = build_roadmap(env, ctrl, system, roadmap_params_from_config(rp))
    save_roadmap(rm, args.out)
    print(f"{args.out}: {rm.n_vertices} vertices, {rm.n_edges} edges")
    return 0


def cmd_plan(args) -> int:
    cfg = _load_config(args.config)
    env = load_environment(args.env)
    system = _system(args, cfg)
    ctrl = controller_from_config(cfg.get("controller"))
    params = planner_params_from_config(cfg.get("planner"))
    roadmap = load_roadmap(args.roadmap, env) if args.roadmap else None
    start = np.asarray(_floats(args.start))
    if len(start) == 3:
        start = lift_config(start, system.dim_x)
    query = Query(start, Configuration.from_seq(_floats(args.goal)), args.eps)
    res = plan(query, env, system, ctrl, roadmap, ExpansionStrategy(args.strategy, args.k), args.planner,
               budget_s=args.budget_s, max_iterations=args.max_iterations, seed=args.seed, params=params)
    solutions = []
    for s in res.solutions:
        ok, reason = check_solution(query, s.plan, env, system)
        solutions.append({"time_found": s.time_found, "iteration": s.iteration, "cost": s.cost,
                          "replay_ok": ok, "replay_error": reason, "plan": s.plan.to_dict()})
    out = {
        "query": {"start": start.tolist(), "goal": list(query.goal), "epsilon": query.epsilon},
        "planner": args.planner, "strategy": args.strategy, "seed": args.seed,
        "solutions": solutions,
        "tree": {"iterations": res.iterations, "nodes": res.n_nodes, "elapsed_s": res.elapsed},
        "warnings": res.warnings,
    }
    Path(args.out).write_text(json.dumps(out, indent=1) + "\n")
    best = res.best
    print(f"{len(solutions)} solution(s); best cost "
          f"{best.cost:.3f} s" if best else "no solution found", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    suite = load_suite(args.suite)
    curves = run_suite(suite, args.out_dir, jobs=args.jobs)
    for g, s in curves["series"].items():
        cost = s["mean_normalized_cost"][-1]
        print(f"{g}: success {s['success_ratio'][-1]:.2f}, "
              f"mean normalized cost {'n/a' if cost is None else f'{cost:.3f}'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kinoplan", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-roadmap", help="build a roadmap with gaps and save it")
    b.add_argument("--env", required=True)
    b.add_argument("--system", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--grid", type=float, help="xy grid spacing (m)")
    b.add_argument("--grid-theta", type=float, help="heading spacing (rad)")
    b.add_argument("--tmax", type=float, help="rollout time limit (s)")
    b.add_argument("--radius", type=float, help="planar connection radius (m)")
    b.add_argument("--eps", type=float)
    b.add_argument("--config", help="JSON with system/controller/roadmap sections")
    b.set_defaults(func=cmd_build_roadmap)

    q = sub.add_parser("plan", help="solve one query")
    q.add_argument("--env", required=True)
    q.add_argument("--roadmap")
    q.add_argument("--system", required=True)
    q.add_argument("--strategy", choices=STRATEGIES, default="rogue")
    q.add_argument("--planner", choices=PLANNERS, default="dirt")
    q.add_argument("--start", required=True, help="x,y,theta or full state")
    q.add_argument("--goal", required=True, help="x,y,theta")
    q.add_argument("--budget-s", type=float)
    q.add_argument("--max-iterations", type=int)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--eps", type=float, default=DEFAULT_EPS)
    q.add_argument("--k", type=int, default=5, help="blossom size for random/rlg")
    q.add_argument("--config")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_plan)

    r = sub.add_parser("bench", help="run a benchmark suite")
    r.add_argument("--suite", required=True)
    r.add_argument("--out-dir", required=True)
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "budget_s", None) is None and getattr(args, "max_iterations", None) is None \
            and args.command == "plan":
        args.budget_s = 60.0
    try:
        return args.func(args)
    except (EnvironmentFileError, RoadmapError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
