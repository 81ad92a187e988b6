"""Plan one Narrow query with each expansion strategy and compare anytime costs.

Run:  python3 demos/02_plan_narrow.py [seconds per planner]
"""

import sys
from importlib.resources import files

from kinoplan.bench import load_suite, query_milestones
from kinoplan.planner import check_solution, plan
from kinoplan.roadmap import build_roadmap

budget = float(sys.argv[1]) if len(sys.argv) > 1 else 10.0
suite = load_suite(files("kinoplan") / "data" / "suites" / "narrow_diff_drive.json")
query = suite.queries[0]

print("building the Narrow roadmap (about a minute)...")
rm = build_roadmap(suite.env, suite.controller, suite.system, suite.roadmap_params, query_milestones(suite))

for strategy in ("rogue", "rlg", "random"):
    res = plan(query, suite.env, suite.system, suite.controller, rm, strategy, "dirt", budget_s=budget, seed=0)
    print(f"\nDIRT-{strategy}: {res.iterations} iterations, {res.n_nodes} tree nodes")
    if not res.solutions:
        print("  no solution")
        continue
    for s in res.solutions[:3] + res.solutions[3:][-2:]:
        print(f"  t = {s.time_found:6.2f} s   cost {s.cost:6.2f} s")
    ok, why = check_solution(query, res.best.plan, suite.env, suite.system)
    print(f"  best plan replays {'cleanly' if ok else 'with error: ' + why}")
