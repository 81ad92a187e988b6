"""A small reproducible benchmark: iteration budgets, raw CSV records, curves.

Run:  python3 demos/04_benchmark.py [out_dir]
"""

import sys
from importlib.resources import files

from kinoplan.bench import reaggregate, run_suite, series_of, suite_from_dict

out = sys.argv[1] if len(sys.argv) > 1 else "demo_bench"
env_dir = files("kinoplan") / "data" / "envs"
suite = suite_from_dict({
    "name": "indoor-mini",
    "environment": "indoor.json",
    "system": "diff_drive",
    "roadmap": {"grid_xy": 1.0, "grid_theta": 3.141592653589793},
    "queries": [{"name": "hall", "start": [2, 1, 0], "goal": [8, 5, 1.57]},
                {"name": "door", "start": [2, 12, 0], "goal": [6, 9, 0]}],
    "strategies": ["rogue", "rlg", "random"],
    "seeds": 3,
    "max_iterations": 1500,
}, env_dir)

curves = run_suite(suite, out)
print("best cost over all runs:")
for name, c in curves["best_cost"].items():
    print(f"  {name:6s} {c:.2f} s")
for strategy in suite.strategies:
    s = series_of(curves, "dirt", strategy)
    ratio, cost = s.at(suite.budget)
    print(f"DIRT-{strategy:6s} solved {ratio:.2f} of runs, mean normalized cost {cost:.3f}")

# the curves are a pure function of the CSV records
assert reaggregate(out) == curves
print(f"raw records in {out}/runs.csv and {out}/solutions.csv")
