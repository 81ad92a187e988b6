"""Why the roadmap path alone is not a solution: follow it and watch the gaps add up.

Run:  python3 demos/03_follow_roadmap.py
"""

from importlib.resources import files

from kinoplan.bench import load_suite, query_milestones
from kinoplan.planner import follow_roadmap_path, prepare_roadmap
from kinoplan.roadmap import build_roadmap

suite = load_suite(files("kinoplan") / "data" / "suites" / "narrow_diff_drive.json")
rm = build_roadmap(suite.env, suite.controller, suite.system, suite.roadmap_params, query_milestones(suite))

for q in suite.queries:
    view, wf = prepare_roadmap(q, suite.env, suite.system, suite.controller, rm)
    res = follow_roadmap_path(q, view, wf, suite.controller, suite.env, suite.system)
    if res.success:
        print(f"{q.name}: reached the goal in {res.trajectory.total_duration:.2f} s")
    else:
        where = "" if res.collision_at is None else " at (%.2f, %.2f)" % res.collision_at[:2]
        print(f"{q.name}: {res.reason}{where} after {len(res.waypoints)} waypoints")
