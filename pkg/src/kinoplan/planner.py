"""Tree sampling-based kinodynamic planners with pluggable expansion.

Planners: ``rrt`` selects the tree node nearest a random configuration;
``dirt`` mostly selects the unexpanded node with the lowest cost-plus-
heuristic and immediately reselects a child that improves on its parent.

Expansions: ``random`` (blossom of random controls), ``rlg`` (controller
toward random local goals) and ``rogue`` (controller toward the roadmap
successor on a node's first expansion, random controls afterwards).
"""

from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .controller import PoseController, rollout_to_goal
from .core import DEFAULT_EPS, DEFAULT_WEIGHTS, Control, DistanceWeights, Plan, Query, Trajectory
from .dynamics import PropagationDiverged, SystemModel, n_steps_for, replay, sample_control
from .environment import Environment, is_state_free, is_trajectory_free, sample_free_config
from .roadmap import RoadmapView, RoadmapWithGaps, Wavefront, compute_wavefront, insert_query

log = logging.getLogger(__name__)

STRATEGIES = ("random", "rlg", "rogue")
PLANNERS = ("rrt", "dirt")
# costs accumulate float sums; smaller differences are not improvements
COST_TOL = 1e-9


@dataclass(frozen=True)
class ExpansionStrategy:
    kind: str = "rogue"
    k: int = 5

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.k < 1:
            raise ValueError("blossom size must be >= 1")


@dataclass(frozen=True)
class PlannerParams:
    p_informed: float = 0.75
    # uniform pick over all nodes keeps every node selectable
    p_uniform: float = 0.05
    min_control_duration: float = 0.5
    max_control_duration: float = 2.0
    t_max: float = 10.0
    successor_rule: str = "shortest_path"
    prune: bool = True


# --------------------------------------------------------------------------
# tree


@dataclass
class TreeNode:
    id: int
    state: np.ndarray
    parent: int | None
    plan: Plan
    trajectory: Trajectory
    cost: float
    h: float = 0.0
    expanded_once: bool = False
    roadmap_vertex: int = -1
    in_goal: bool = False
    children: list[int] = field(default_factory=list)


class NearestIndex:
    """Growable weighted-SE(2) nearest-neighbour index (linear scan)."""

    def __init__(self, weights: DistanceWeights = DEFAULT_WEIGHTS, capacity: int = 1024):
        self._data = np.empty((capacity, 3))
        self._n = 0
        self._w = weights.as_array()

    def __len__(self):
        return self._n

    def add(self, q) -> None:
        if self._n == len(self._data):
            grown = np.empty((2 * len(self._data), 3))
            grown[: self._n] = self._data[: self._n]
            self._data = grown
        self._data[self._n] = q[:3]
        self._n += 1

    def nearest(self, q) -> int:
        return int(K.nearest(self._data, self._n, np.asarray(q[:3], dtype=np.float64), self._w))

    @property
    def points(self) -> np.ndarray:
        return self._data[: self._n]


class PlanningTree:
    def __init__(self, x0, dim_u: int = 2, dt: float = 0.02, weights=DEFAULT_WEIGHTS):
        self.nodes: list[TreeNode] = []
        self.index = NearestIndex(weights)
        self.best: tuple[int, float] | None = None
        self.pending: int | None = None
        self._heap: list[tuple[float, int]] = []
        x0 = np.asarray(x0, dtype=np.float64)
        root = TreeNode(0, x0, None, Plan.empty(dim_u), Trajectory(x0[None, :], dt), 0.0)
        self._append(root)

    def __len__(self):
        return len(self.nodes)

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    def _append(self, node: TreeNode) -> TreeNode:
        self.nodes.append(node)
        self.index.add(node.state)
        if not node.in_goal:
            heapq.heappush(self._heap, (node.cost + node.h, node.id))
        return node

    def add_child(self, parent: TreeNode, trajectory: Trajectory, plan: Plan, h: float,
                  roadmap_vertex: int = -1, in_goal: bool = False) -> TreeNode:
        node = TreeNode(
            len(self.nodes), trajectory.states[-1], parent.id, plan, trajectory,
            parent.cost + trajectory.total_duration, h, roadmap_vertex=roadmap_vertex, in_goal=in_goal,
        )
        parent.children.append(node.id)
        return self._append(node)

    def pop_informed(self, skip=None) -> TreeNode | None:
        """Lowest cost+heuristic node not yet expanded (lazy deletion).

        ``skip(node)`` drops nodes that can no longer improve the solution.
        """
        while self._heap:
            _, i = heapq.heappop(self._heap)
            node = self.nodes[i]
            if node.expanded_once or node.in_goal:
                continue
            if skip is not None and skip(node):
                continue
            return node
        return None

    def path_to(self, node_id: int) -> list[TreeNode]:
        path = []
        i = node_id
        while i is not None:
            path.append(self.nodes[i])
            i = self.nodes[i].parent
        return path[::-1]

    def plan_to(self, node_id: int, dim_u: int = 2) -> Plan:
        return Plan.concat([n.plan for n in self.path_to(node_id)], dim_u)

    def trajectory_to(self, node_id: int) -> Trajectory:
        path = self.path_to(node_id)
        chunks = [path[0].trajectory.states] + [n.trajectory.states[1:] for n in path[1:]]
        return Trajectory(np.concatenate(chunks), path[0].trajectory.dt)


# --------------------------------------------------------------------------
# planning context


@dataclass
class PlanningContext:
    """Everything an expansion needs for one query."""

    query: Query
    env: Environment
    system: SystemModel
    ctrl: object
    params: PlannerParams = PlannerParams()
    view: RoadmapView | None = None
    wavefront: Wavefront | None = None
    weights: DistanceWeights = DEFAULT_WEIGHTS

    def __post_init__(self):
        self.goal = self.query.goal.as_array()
        self._w = self.weights.as_array()
        self._free_lo = np.array([self.env.bounds[0], self.env.bounds[2], -math.pi])
        self._free_hi = np.array([self.env.bounds[1], self.env.bounds[3], math.pi])
        if self.view is not None:
            self._rm_index = NearestIndex(self.weights, max(1, self.view.n_vertices))
            for v in self.view.vertices:
                self._rm_index.add(v)

    @property
    def eps(self) -> float:
        return self.query.epsilon

    def nearest_vertex(self, x) -> int:
        return self._rm_index.nearest(x) if self.view is not None else -1

    def heuristic(self, x, vertex: int = -1) -> float:
        if self.wavefront is not None:
            return float(self.wavefront.value[vertex])
        d = K.config_distance(x[0], x[1], x[2], self.goal[0], self.goal[1], self.goal[2], self._w)
        return d / self.system.max_speed

    def lower_bound(self, x) -> float:
        """Admissible time-to-goal bound used for pruning."""
        d = math.hypot(x[0] - self.goal[0], x[1] - self.goal[1]) - self.eps / math.sqrt(self.weights.xy)
        return max(0.0, d) / self.system.max_speed

    def in_goal(self, x) -> bool:
        return K.config_distance(x[0], x[1], x[2], self.goal[0], self.goal[1], self.goal[2], self._w) < self.eps

    def sample_config(self, rng) -> np.ndarray:
        return sample_free_config(self.env, rng)


# --------------------------------------------------------------------------
# selection


def select_node(tree: PlanningTree, planner_kind: str, rng: np.random.Generator,
                ctx: PlanningContext | None = None, params: PlannerParams = PlannerParams()) -> TreeNode:
    """Pick the node to expand next."""
    if len(tree) == 1:
        return tree.root
    if planner_kind == "dirt":
        if tree.pending is not None:
            node = tree.nodes[tree.pending]
            tree.pending = None
            return node
        r = rng.random()
        if r < params.p_uniform:
            return tree.nodes[int(rng.integers(len(tree)))]
        if r < params.p_uniform + params.p_informed:
            skip = None
            if tree.best is not None and ctx is not None:
                best = tree.best[1]
                skip = lambda n: n.cost + ctx.lower_bound(n.state) >= best  # noqa: E731
            node = tree.pop_informed(skip)
            if node is not None:
                return node
    elif planner_kind != "rrt":
        raise ValueError(f"unknown planner {planner_kind!r}")
    return tree.nodes[_rrt_nearest(tree, rng, ctx)]


def _rrt_nearest(tree: PlanningTree, rng, ctx) -> int:
    if ctx is not None:
        q = ctx.sample_config(rng)
    else:
        q = rng.uniform([-1.0, -1.0, -math.pi], [1.0, 1.0, math.pi])
    return tree.index.nearest(q)


# --------------------------------------------------------------------------
# expansion proposals


class Proposal(NamedTuple):
    """Either a constant control or a controller rollout toward ``local_goal``."""

    control: Control | None = None
    local_goal: np.ndarray | None = None
    max_duration: float = 0.0
    informed: bool = False


def _random_duration(ctx: PlanningContext, rng) -> float:
    p = ctx.params
    return sample_control(ctx.system, rng, p.max_control_duration, p.min_control_duration).duration


def expand_random(node: TreeNode, k: int, ctx: PlanningContext, rng) -> list[Proposal]:
    p = ctx.params
    return [
        Proposal(control=sample_control(ctx.system, rng, p.max_control_duration, p.min_control_duration))
        for _ in range(k)
    ]


def expand_rlg(node: TreeNode, k: int, ctx: PlanningContext, rng) -> list[Proposal]:
    out = []
    for _ in range(k):
        q = ctx.sample_config(rng)
        out.append(Proposal(local_goal=q, max_duration=_random_duration(ctx, rng)))
    return out


def expand_rogue(node: TreeNode, ctx: PlanningContext, rng) -> list[Proposal]:
    """First expansion: controller toward the successor of the nearest
    roadmap vertex (random local goal if it has none).  Later: one random
    control from the full control space."""
    if ctx.wavefront is None:
        raise ValueError("rogue expansion needs a wavefront")
    if node.expanded_once:
        return expand_random(node, 1, ctx, rng)
    if node.roadmap_vertex < 0:
        node.roadmap_vertex = ctx.nearest_vertex(node.state)
    succ = ctx.wavefront.successor_of(node.roadmap_vertex)
    if succ is not None:
        return [Proposal(local_goal=ctx.view.vertices[succ].copy(), max_duration=ctx.params.t_max,
                         informed=True)]
    q = ctx.sample_config(rng)
    return [Proposal(local_goal=q, max_duration=_random_duration(ctx, rng))]


def expand(node: TreeNode, strategy: ExpansionStrategy, ctx: PlanningContext, rng) -> list[Proposal]:
    if strategy.kind == "rogue":
        return expand_rogue(node, ctx, rng)
    if strategy.kind == "rlg":
        return expand_rlg(node, strategy.k, ctx, rng)
    return expand_random(node, strategy.k, ctx, rng)


class Edge(NamedTuple):
    trajectory: Trajectory
    plan: Plan
    valid: bool
    in_goal: bool


def propagate_proposal(x, proposal: Proposal, ctx: PlanningContext) -> Edge:
    """Forward-simulate a proposal with collision gating.  Edges passing
    through the goal region are cut at the first goal state."""
    system, env = ctx.system, ctx.env
    x = np.asarray(x, dtype=np.float64)
    if proposal.control is not None:
        u = proposal.control
        n = n_steps_for(u.duration, system.dt)
        states, status = K.propagate_checked(
            system.kind, system.params, x, np.ascontiguousarray(u.values), n, system.dt,
            ctx.goal, ctx.eps, ctx._w, *env.arrays)
        if status == K.ST_DIVERGED:
            raise PropagationDiverged("non-finite state during expansion")
        if status == K.ST_COLLIDED:
            return Edge(Trajectory(states, system.dt), Plan.empty(system.dim_u), False, False)
        steps = len(states) - 1
        plan = Plan(np.asarray(u.values)[None, :], np.array([steps * system.dt]))
        return Edge(Trajectory(states, system.dt), plan, True, status == K.ST_REACHED)
    res = rollout_to_goal(x, proposal.local_goal, proposal.max_duration, env, ctx.ctrl, system,
                          ctx.eps, ctx.weights)
    states = res.trajectory.states
    gi = K.first_goal_index(np.ascontiguousarray(states), ctx.goal, ctx.eps, ctx._w)
    last_free = len(states) - (2 if res.collided else 1)
    if 0 < gi <= last_free:
        traj = Trajectory(states[: gi + 1], system.dt)
        plan = Plan(res.plan.values[:gi], res.plan.durations[:gi])
        return Edge(traj, plan, True, True)
    if res.collided or len(states) < 2:
        return Edge(res.trajectory, res.plan, False, False)
    return Edge(res.trajectory, res.plan, True, False)


# --------------------------------------------------------------------------
# planning loop


class Solution(NamedTuple):
    time_found: float
    iteration: int
    cost: float
    plan: Plan
    node_id: int


@dataclass
class PlanResult:
    solutions: list[Solution]
    iterations: int
    n_nodes: int
    elapsed: float
    warnings: list[str] = field(default_factory=list)
    tree: PlanningTree | None = field(default=None, repr=False)

    @property
    def best(self) -> Solution | None:
        return self.solutions[-1] if self.solutions else None


def validate_query(query: Query, env: Environment) -> None:
    if len(query.start) < 3 or not np.all(np.isfinite(query.start)):
        raise ValueError("query start is not a valid state")
    if not is_state_free(query.start, env):
        raise ValueError("query start is in collision")
    g = query.goal
    if not (env.bounds[0] <= g.x <= env.bounds[1] and env.bounds[2] <= g.y <= env.bounds[3]):
        raise ValueError("query goal outside workspace")


def prepare_roadmap(query: Query, env: Environment, system: SystemModel, ctrl,
                    roadmap: RoadmapWithGaps, params: PlannerParams = PlannerParams(),
                    weights=DEFAULT_WEIGHTS) -> tuple[RoadmapView, Wavefront]:
    view = insert_query(roadmap, query.start, query.goal, env, ctrl, system, eps=query.epsilon,
                        weights=weights)
    return view, compute_wavefront(view, view.goal_id, rule=params.successor_rule)


def plan(query: Query, env: Environment, system: SystemModel, ctrl, roadmap: RoadmapWithGaps | None = None,
         strategy: ExpansionStrategy | str = "rogue", planner_kind: str = "dirt",
         budget_s: float | None = None, max_iterations: int | None = None, seed: int = 0,
         params: PlannerParams = PlannerParams(), weights=DEFAULT_WEIGHTS,
         rng: np.random.Generator | None = None, keep_tree: bool = False) -> PlanResult:
    """Anytime planning loop; returns every improving solution in order.

    With only ``max_iterations`` set the run is fully deterministic for a
    given seed.
    """
    if isinstance(strategy, str):
        strategy = ExpansionStrategy(strategy)
    if planner_kind not in PLANNERS:
        raise ValueError(f"unknown planner {planner_kind!r}")
    if budget_s is None and max_iterations is None:
        raise ValueError("need a time or iteration budget")
    validate_query(query, env)
    rng = np.random.default_rng(seed) if rng is None else rng
    t0 = time.perf_counter()
    warnings: list[str] = []

    view = wavefront = None
    if strategy.kind == "rogue":
        if roadmap is None:
            raise ValueError("rogue expansion requires a roadmap")
        view, wavefront = prepare_roadmap(query, env, system, ctrl, roadmap, params, weights)
        warnings.extend(view.warnings)
    ctx = PlanningContext(query, env, system, ctrl, params, view, wavefront, weights)

    x0 = np.asarray(query.start, dtype=np.float64)
    tree = PlanningTree(x0, system.dim_u, system.dt, weights)
    root = tree.root
    root.roadmap_vertex = view.start_id if view is not None else -1
    root.h = ctx.heuristic(x0, root.roadmap_vertex)
    solutions: list[Solution] = []
    if ctx.in_goal(x0):
        root.in_goal = True
        tree.best = (0, 0.0)
        solutions.append(Solution(time.perf_counter() - t0, 0, 0.0, Plan.empty(system.dim_u), 0))
        return PlanResult(solutions, 0, 1, time.perf_counter() - t0, warnings, tree if keep_tree else None)

    it = 0
    while True:
        if max_iterations is not None and it >= max_iterations:
            break
        if budget_s is not None and time.perf_counter() - t0 >= budget_s:
            break
        it += 1
        node = select_node(tree, planner_kind, rng, ctx, params)
        proposals = expand(node, strategy, ctx, rng)
        node.expanded_once = True
        best_child = None
        for prop in proposals:
            edge = propagate_proposal(node.state, prop, ctx)
            if not edge.valid:
                continue
            end = edge.trajectory.states[-1]
            g = node.cost + edge.trajectory.total_duration
            if params.prune and tree.best is not None and g + ctx.lower_bound(end) >= tree.best[1] - COST_TOL:
                continue
            vtx = ctx.nearest_vertex(end)
            child = tree.add_child(node, edge.trajectory, edge.plan, ctx.heuristic(end, vtx), vtx, edge.in_goal)
            if edge.in_goal:
                if tree.best is None or child.cost < tree.best[1] - COST_TOL:
                    tree.best = (child.id, child.cost)
                    solutions.append(Solution(time.perf_counter() - t0, it, child.cost,
                                              tree.plan_to(child.id, system.dim_u), child.id))
                continue
            if best_child is None or child.h < best_child.h:
                best_child = child
        if planner_kind == "dirt" and best_child is not None and best_child.h < node.h:
            tree.pending = best_child.id

    return PlanResult(solutions, it, len(tree), time.perf_counter() - t0, warnings,
                      tree if keep_tree else None)


def check_solution(query: Query, plan_: Plan, env: Environment, system: SystemModel,
                   weights=DEFAULT_WEIGHTS) -> tuple[bool, str]:
    """Replay ``plan_`` from the query start; ok iff collision-free and ending in the goal set."""
    traj = replay(query.start, plan_, system)
    if not is_trajectory_free(traj, env):
        return False, "collision"
    end = traj.states[-1]
    g = query.goal
    if K.config_distance(end[0], end[1], end[2], g.x, g.y, g.theta, weights.as_array()) >= query.epsilon:
        return False, "does not reach goal"
    return True, ""


# --------------------------------------------------------------------------
# path-following baseline


@dataclass
class FollowResult:
    trajectory: Trajectory
    success: bool
    reason: str = ""
    collision_at: tuple[float, float, float] | None = None
    waypoints: list[int] = field(default_factory=list)


def follow_roadmap_path(query: Query, view: RoadmapView, wavefront: Wavefront, ctrl, env: Environment,
                        system: SystemModel, t_max: float = 10.0, weights=DEFAULT_WEIGHTS) -> FollowResult:
    """Chain controller rollouts along successor vertices from the start.

    Stops at the goal, at the first collision, or when a rollout fails to
    reach its waypoint (no progress on the roadmap within ``t_max``).
    """
    x = np.asarray(query.start, dtype=np.float64)
    goal = query.goal.as_array()
    w = weights.as_array()
    chunks = [x[None, :]]
    v = view.start_id
    visited = [v]

    def done(states):
        return K.first_goal_index(np.ascontiguousarray(states), goal, query.epsilon, w)

    if done(x[None, :]) >= 0:
        return FollowResult(Trajectory(x[None, :], system.dt), True, "start in goal", None, visited)
    if wavefront.successor_of(v) is None:
        return FollowResult(Trajectory(x[None, :], system.dt), False,
                            "start vertex has no successor (goal unreachable on roadmap)", None, visited)
    for _ in range(view.n_vertices + 1):
        target = wavefront.successor_of(v)
        if target is None:
            break
        res = rollout_to_goal(x, view.vertices[target], t_max, env, ctrl, system, query.epsilon, weights)
        states = res.trajectory.states
        gi = done(states)
        limit = len(states) - (2 if res.collided else 1)
        if 0 <= gi <= limit:
            chunks.append(states[1: gi + 1])
            return FollowResult(Trajectory(np.concatenate(chunks), system.dt), True, "", None, visited)
        chunks.append(states[1:])
        traj = Trajectory(np.concatenate(chunks), system.dt)
        if res.collided:
            c = states[-1]
            return FollowResult(traj, False, f"collision while heading to vertex {target}",
                                (float(c[0]), float(c[1]), float(c[2])), visited)
        if not res.reached:
            return FollowResult(traj, False, f"stalled before vertex {target}", None, visited)
        x = states[-1]
        v = target
        visited.append(v)
        if v == view.goal_id:
            # the goal vertex ball is the goal set
            return FollowResult(traj, True, "", None, visited)
    return FollowResult(Trajectory(np.concatenate(chunks), system.dt), False,
                        "successor chain ended before the goal", None, visited)
