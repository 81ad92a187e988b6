"""Build a roadmap with gaps over the Narrow map and look at what an edge certifies.

Run:  python3 demos/01_roadmap_with_gaps.py
"""

import math
from importlib.resources import files

import numpy as np

from kinoplan.controller import PoseController, rollout_to_goal
from kinoplan.core import Configuration, distance
from kinoplan.dynamics import diff_drive
from kinoplan.environment import lift_config, load_environment
from kinoplan.roadmap import RoadmapParams, build_roadmap, compute_wavefront, insert_query

env = load_environment(files("kinoplan") / "data" / "envs" / "narrow.json")
system, ctrl = diff_drive(), PoseController()

# Two headings per cell keeps this demo under half a minute; the benchmarks use four.
params = RoadmapParams(grid_xy=1.0, grid_theta=math.pi, radius=5.0)
rm = build_roadmap(env, ctrl, system, params)
print(f"roadmap: {rm.n_vertices} milestones, {rm.n_edges} directed edges")
print(f"edge durations: median {np.median(rm.cost):.2f} s, max {rm.cost.max():.2f} s")

# An edge says only that the controller, started at rest on the source,
# reaches the target's 0.5 ball.  Where it actually ends is the gap.
k = int(np.argmax(rm.cost))
src, dst = rm.vertices[rm.src[k]], rm.vertices[rm.dst[k]]
r = rollout_to_goal(lift_config(src), dst, params.t_max, env, ctrl, system)
end = r.trajectory.end
fmt = lambda q: "({:.2f}, {:.2f}, {:+.2f})".format(*q)  # noqa: E731
print(f"\nlongest edge {fmt(src)} -> {fmt(dst)}: {r.duration:.2f} s")
print(f"  ends {distance(end[:3], dst):.3f} away from the target, still moving at v={end[3]:.2f} m/s")

# Per-query overlay and cost-to-go.
start, goal = lift_config((2.0, 2.0, 0.0)), Configuration(22.0, 10.0, 0.0)
view = insert_query(rm, start, goal, env, ctrl, system)
wf = compute_wavefront(view)
path = wf.path_from(view.start_id)
print(f"\nW(start) = {wf.value[view.start_id]:.2f} s over {len(path) - 1} roadmap edges")
for v in path:
    x, y, th = view.vertices[v]
    print(f"  ({x:5.2f}, {y:5.2f}, {th:+.2f})  W = {wf.value[v]:6.2f}")
