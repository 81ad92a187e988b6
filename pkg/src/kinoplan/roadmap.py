"""Roadmap with gaps: controller-certified reachability between grid poses.

An edge ``i -> j`` means the controller, started at rest on pose ``i``,
enters the eps-ball of pose ``j`` without collision within ``t_max``.  It
does not mean pose ``j`` is hit exactly, hence the gaps.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .controller import PoseController, rollout_to_goal
from .core import DEFAULT_EPS, DEFAULT_WEIGHTS, DistanceWeights
from .dynamics import SystemModel
from .environment import Environment, is_config_free, lift_config

log = logging.getLogger(__name__)

FORMAT_MAGIC = b"KPRMAP\x00\x01"
FORMAT_VERSION = 1
DUPLICATE_TOL = 1e-9


class RoadmapError(RuntimeError):
    pass


class RoadmapFormatError(RoadmapError):
    pass


@dataclass(frozen=True)
class RoadmapParams:
    grid_xy: float = 1.0
    grid_theta: float = math.pi / 2
    t_max: float = 10.0
    eps: float = DEFAULT_EPS
    radius: float = 5.0
    seed: int = 0
    w_xy: float = DEFAULT_WEIGHTS.xy
    w_theta: float = DEFAULT_WEIGHTS.theta

    def __post_init__(self):
        if not (self.grid_xy > 0 and self.grid_theta > 0):
            raise ValueError("grid spacing must be positive")
        if not (self.t_max > 0 and self.eps > 0 and self.radius > 0):
            raise ValueError("t_max, eps and radius must be positive")

    @property
    def weights(self) -> DistanceWeights:
        return DistanceWeights(self.w_xy, self.w_theta)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RoadmapWithGaps:
    vertices: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    cost: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.src = np.ascontiguousarray(self.src, dtype=np.int64)
        self.dst = np.ascontiguousarray(self.dst, dtype=np.int64)
        self.cost = np.ascontiguousarray(self.cost, dtype=np.float64)
        for a in (self.vertices, self.src, self.dst, self.cost):
            a.setflags(write=False)
        self._out = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def _csr(self):
        if self._out is None:
            self._out = _csr(self.src, self.dst, self.cost, self.n_vertices)
        return self._out

    def out_edges(self, i: int) -> list[tuple[int, float]]:
        ptr, nbr, c = self._csr()
        return [(int(nbr[k]), float(c[k])) for k in range(ptr[i], ptr[i + 1])]

    def in_edges(self, i: int) -> list[tuple[int, float]]:
        mask = self.dst == i
        return [(int(s), float(c)) for s, c in zip(self.src[mask], self.cost[mask])]

    def edge_set(self) -> dict[tuple[int, int], float]:
        return {(int(s), int(d)): float(c) for s, d, c in zip(self.src, self.dst, self.cost)}

    def find_vertex(self, q, tol: float = DUPLICATE_TOL) -> int:
        """Index of a vertex coincident with ``q`` (angle-wrapped), or -1."""
        q = np.asarray(tuple(q), dtype=np.float64)
        d = np.abs(self.vertices - q)
        d[:, 2] = np.abs([K.wrap(t) for t in (self.vertices[:, 2] - q[2])])
        hit = np.flatnonzero(np.all(d <= tol, axis=1))
        return int(hit[0]) if len(hit) else -1

    def structurally_equal(self, other: "RoadmapWithGaps") -> bool:
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.src, other.src)
            and np.array_equal(self.dst, other.dst)
            and np.array_equal(self.cost, other.cost)
        )


def _csr(src, dst, cost, n):
    order = np.lexsort((dst, src))
    counts = np.bincount(src, minlength=n)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, dst[order], cost[order]


# --------------------------------------------------------------------------
# construction


def sample_milestones(env: Environment, grid_xy: float = 1.0, grid_theta: float = math.pi / 2,
                      extra=()) -> np.ndarray:
    """Collision-free poses on a regular (x, y, theta) grid, plus ``extra`` poses.

    Grid points run from the lower bound to the upper bound inclusive.
    """
    if not (grid_xy > 0 and grid_theta > 0):
        raise ValueError("grid spacing must be positive")
    x0, x1, y0, y1 = env.bounds
    xs = x0 + grid_xy * np.arange(int(math.floor((x1 - x0) / grid_xy + 1e-9)) + 1)
    ys = y0 + grid_xy * np.arange(int(math.floor((y1 - y0) / grid_xy + 1e-9)) + 1)
    n_th = max(1, int(round(2 * math.pi / grid_theta)))
    ths = [K.wrap(k * grid_theta) for k in range(n_th)]
    out = []
    for x in xs:
        for y in ys:
            for th in ths:
                if is_config_free((x, y, th), env):
                    out.append((float(x), float(y), th))
    for q in extra:
        q = (float(q[0]), float(q[1]), K.wrap(float(q[2])))
        if not is_config_free(q, env):
            raise RoadmapError(f"extra milestone {q} is in collision")
        if not any(_same_config(q, v) for v in out):
            out.append(q)
    if not out:
        raise RoadmapError("no collision-free milestones")
    return np.array(out, dtype=np.float64).reshape(-1, 3)


def _same_config(a, b, tol=DUPLICATE_TOL) -> bool:
    return abs(a[0] - b[0]) <= tol and abs(a[1] - b[1]) <= tol and abs(K.wrap(a[2] - b[2])) <= tol


def _rollout_batch(starts, goals, env, ctrl, system, t_max, eps, weights):
    """(steps, status) for independent controller rollouts starts[k] -> goals[k]."""
    max_steps = int(round(t_max / system.dt))
    starts = np.ascontiguousarray(starts, dtype=np.float64).reshape(-1, system.dim_x)
    goals = np.ascontiguousarray(goals, dtype=np.float64).reshape(-1, 3)
    if isinstance(ctrl, PoseController):
        return K.connect_pairs(system.kind, system.params, ctrl.gains, system.control_lo,
                               system.control_hi, starts, goals, eps, weights.as_array(),
                               max_steps, system.dt, *env.arrays)
    steps = np.empty(len(starts), dtype=np.int64)
    status = np.empty(len(starts), dtype=np.int64)
    for k in range(len(starts)):
        r = rollout_to_goal(starts[k], goals[k], t_max, env, ctrl, system, eps, weights)
        steps[k] = len(r.trajectory) - 1
        status[k] = K.ST_REACHED if r.reached else (K.ST_COLLIDED if r.collided else K.ST_TIMEOUT)
    return steps, status


def _candidates(q, vertices, radius, exclude=-1) -> np.ndarray:
    d = np.hypot(vertices[:, 0] - q[0], vertices[:, 1] - q[1])
    idx = np.flatnonzero(d <= radius)
    if exclude >= 0:
        idx = idx[idx != exclude]
    return idx


class Connection(NamedTuple):
    accessible: list[int]        # A: vertices whose ball is reached from q_i
    departing: list[int]         # D: vertices that reach q_i's ball
    out_edges: list[tuple[int, float]]
    in_edges: list[tuple[int, float]]


def connect_vertex(q_i, vertices, env: Environment, ctrl, system: SystemModel, t_max: float = 10.0,
                   eps: float = DEFAULT_EPS, radius: float = 5.0, weights=DEFAULT_WEIGHTS,
                   index: int = -1, x_start=None, forward: bool = True,
                   backward: bool = True) -> Connection:
    """Accessibility sets of ``q_i`` against ``vertices`` within planar ``radius``.

    Forward rollouts start from ``x_start`` when given, else from the rest
    state at ``q_i``.  Rollouts that need zero steps are not edges.
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    q_i = np.asarray(tuple(q_i), dtype=np.float64)
    cand = _candidates(q_i, vertices, radius, index)
    acc, dep, outs, ins = [], [], [], []
    dt = system.dt
    if forward and len(cand):
        x0 = lift_config(q_i, system.dim_x) if x_start is None else np.asarray(x_start, float)
        starts = np.repeat(x0[None, :], len(cand), axis=0)
        steps, status = _rollout_batch(starts, vertices[cand], env, ctrl, system, t_max, eps, weights)
        for j, n, st in zip(cand, steps, status):
            if st == K.ST_REACHED and n > 0:
                acc.append(int(j))
                outs.append((int(j), n * dt))
    if backward and len(cand):
        starts = np.array([lift_config(v, system.dim_x) for v in vertices[cand]])
        goals = np.repeat(q_i[None, :], len(cand), axis=0)
        steps, status = _rollout_batch(starts, goals, env, ctrl, system, t_max, eps, weights)
        for j, n, st in zip(cand, steps, status):
            if st == K.ST_REACHED and n > 0:
                dep.append(int(j))
                ins.append((int(j), n * dt))
    return Connection(acc, dep, outs, ins)


def build_roadmap(env: Environment, ctrl, system: SystemModel, params: RoadmapParams = RoadmapParams(),
                  extra_milestones=()) -> RoadmapWithGaps:
    """Grid milestones connected by controller rollouts.

    Every ordered pair within ``params.radius`` is rolled out exactly once,
    which is the union of the A/D sets of every vertex.  Pairs are processed
    in index order so the result is reproducible.
    """
    vertices = sample_milestones(env, params.grid_xy, params.grid_theta, extra_milestones)
    n = len(vertices)
    srcs, dsts = [], []
    for i in range(n):
        cand = _candidates(vertices[i], vertices, params.radius, i)
        srcs.append(np.full(len(cand), i, dtype=np.int64))
        dsts.append(cand)
    src = np.concatenate(srcs) if srcs else np.zeros(0, np.int64)
    dst = np.concatenate(dsts) if dsts else np.zeros(0, np.int64)
    log.info("roadmap: %d vertices, %d candidate pairs", n, len(src))
    starts = np.zeros((len(src), system.dim_x))
    starts[:, :3] = vertices[src]
    steps, status = _rollout_batch(starts, vertices[dst], env, ctrl, system, params.t_max,
                                   params.eps, params.weights)
    keep = (status == K.ST_REACHED) & (steps > 0)
    rm = RoadmapWithGaps(
        vertices, src[keep], dst[keep], steps[keep] * system.dt,
        meta=roadmap_meta(env, ctrl, system, params, n_extra=len(extra_milestones)),
    )
    log.info("roadmap: %d edges", rm.n_edges)
    return rm


def roadmap_meta(env, ctrl, system, params, n_extra=0) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "env_hash": env.content_hash(),
        "env_name": env.name,
        "system": system.name,
        "system_params": system.to_dict(),
        "controller": ctrl.to_dict() if hasattr(ctrl, "to_dict") else {"type": type(ctrl).__name__},
        "params": params.to_dict(),
        "n_extra_milestones": int(n_extra),
    }


# --------------------------------------------------------------------------
# query-time augmentation


@dataclass
class RoadmapView:
    """Roadmap plus start/goal vertices and their edges; the base is not modified."""

    base: RoadmapWithGaps
    vertices: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    cost: np.ndarray
    start_id: int
    goal_id: int
    warnings: list[str] = field(default_factory=list)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def out_edges(self, i: int) -> list[tuple[int, float]]:
        m = self.src == i
        return [(int(d), float(c)) for d, c in zip(self.dst[m], self.cost[m])]

    def in_edges(self, i: int) -> list[tuple[int, float]]:
        m = self.dst == i
        return [(int(s), float(c)) for s, c in zip(self.src[m], self.cost[m])]


def view_of(roadmap: RoadmapWithGaps) -> RoadmapView:
    return RoadmapView(roadmap, roadmap.vertices, roadmap.src, roadmap.dst, roadmap.cost, -1, -1)


def insert_query(roadmap: RoadmapWithGaps, x0, q_goal, env: Environment, ctrl, system: SystemModel,
                 t_max: float | None = None, eps: float | None = None, radius: float | None = None,
                 weights=None) -> RoadmapView:
    """Overlay the start (forward edges from ``x0`` itself) and the goal
    (backward edges into it).  Poses coinciding with an existing vertex reuse it."""
    p = roadmap.meta.get("params", {})
    t_max = p.get("t_max", 10.0) if t_max is None else t_max
    eps = p.get("eps", DEFAULT_EPS) if eps is None else eps
    radius = p.get("radius", 5.0) if radius is None else radius
    if weights is None:
        weights = DistanceWeights(p.get("w_xy", DEFAULT_WEIGHTS.xy), p.get("w_theta", DEFAULT_WEIGHTS.theta))
    x0 = np.asarray(x0, dtype=np.float64)
    if not K.state_free(x0[0], x0[1], x0[2], *env.arrays):
        raise ValueError("start state is in collision")
    q0 = (x0[0], x0[1], K.wrap(x0[2]))
    gx, gy, gth = tuple(q_goal)
    qg = (float(gx), float(gy), K.wrap(float(gth)))

    verts = [roadmap.vertices]
    n = roadmap.n_vertices
    start_id = roadmap.find_vertex(q0)
    if start_id < 0:
        start_id = n
        verts.append(np.array([q0]))
        n += 1
    goal_id = roadmap.find_vertex(qg)
    if goal_id < 0:
        if _same_config(qg, q0) and start_id >= roadmap.n_vertices:
            goal_id = start_id
        else:
            goal_id = n
            verts.append(np.array([qg]))
            n += 1
    vertices = np.concatenate(verts)

    fwd = connect_vertex(q0, vertices, env, ctrl, system, t_max, eps, radius, weights,
                         index=start_id, x_start=x0, backward=False)
    bwd = connect_vertex(qg, vertices, env, ctrl, system, t_max, eps, radius, weights,
                         index=goal_id, forward=False)
    extra: dict[tuple[int, int], float] = {}
    for j, c in fwd.out_edges:
        extra[(start_id, j)] = c
    for j, c in bwd.in_edges:
        extra[(j, goal_id)] = min(c, extra.get((j, goal_id), math.inf))
    # one edge per ordered pair; a cheaper query rollout replaces the stored cost
    cost = roadmap.cost
    base_pairs = roadmap.edge_set()
    overlap = [k for k in extra if k in base_pairs]
    if overlap:
        cost = cost.copy()
        index = {k: i for i, k in enumerate(zip(roadmap.src.tolist(), roadmap.dst.tolist()))}
        for k in overlap:
            cost[index[k]] = min(cost[index[k]], extra.pop(k))
    new = sorted(extra.items())
    new_src = [s for (s, _), _ in new]
    new_dst = [d for (_, d), _ in new]
    new_cost = [c for _, c in new]
    view = RoadmapView(
        roadmap,
        vertices,
        np.concatenate([roadmap.src, np.array(new_src, dtype=np.int64)]),
        np.concatenate([roadmap.dst, np.array(new_dst, dtype=np.int64)]),
        np.concatenate([cost, np.array(new_cost, dtype=np.float64)]),
        start_id,
        goal_id,
    )
    if not any(s == start_id for s in view.src.tolist()):
        view.warnings.append("start has no outgoing roadmap edges")
    if not any(d == goal_id for d in view.dst.tolist()):
        view.warnings.append("goal has no incoming roadmap edges")
    for w in view.warnings:
        log.warning(w)
    return view


# --------------------------------------------------------------------------
# wavefront


@dataclass(frozen=True)
class Wavefront:
    value: np.ndarray       # seconds to goal, inf if unreachable
    successor: np.ndarray   # vertex id or -1
    goal: int

    def successor_of(self, v: int) -> int | None:
        s = int(self.successor[v])
        return None if s < 0 else s

    def path_from(self, v: int) -> list[int]:
        path = [v]
        while self.successor[path[-1]] >= 0:
            path.append(int(self.successor[path[-1]]))
            if len(path) > len(self.value) + 1:
                raise RoadmapError("successor cycle")
        return path


SUCCESSOR_RULES = ("min_value", "shortest_path")


def compute_wavefront(view, goal: int | None = None, rule: str = "shortest_path") -> Wavefront:
    """Cost-to-goal over the roadmap by Dijkstra on reversed edges.

    ``rule`` picks each vertex's successor among its out-neighbours:
    ``"shortest_path"`` (default) takes the one minimising edge cost plus
    cost-to-goal, so ``value[v] == cost(v, succ) + value[succ]``;
    ``"min_value"`` takes the neighbour with the smallest cost-to-goal.
    Ties go to the lowest vertex id.
    """
    if rule not in SUCCESSOR_RULES:
        raise ValueError(f"unknown successor rule {rule!r}")
    goal = view.goal_id if goal is None else goal
    n = view.n_vertices
    if not 0 <= goal < n:
        raise ValueError("goal vertex not in roadmap")
    src = np.asarray(view.src)
    dst = np.asarray(view.dst)
    cost = np.asarray(view.cost)
    # reverse CSR: in-edges grouped by destination
    ptr, preds, pcost = _csr(dst, src, cost, n)
    preds = preds.tolist()
    pcost = pcost.tolist()
    ptr = ptr.tolist()
    value = [math.inf] * n
    value[goal] = 0.0
    done = [False] * n
    heap = [(0.0, goal)]
    while heap:
        w, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        for k in range(ptr[v], ptr[v + 1]):
            u = preds[k]
            nw = pcost[k] + w
            if nw < value[u]:
                value[u] = nw
                heapq.heappush(heap, (nw, u))
    value = np.array(value)
    successor = np.full(n, -1, dtype=np.int64)
    if len(src):
        vd = value[dst]
        key = vd if rule == "min_value" else cost + vd
        ok = np.isfinite(vd) & np.isfinite(value[src]) & (src != goal)
        s, d, k = src[ok], dst[ok], key[ok]
        order = np.lexsort((d, k, s))
        s, d = s[order], d[order]
        first = np.ones(len(s), dtype=bool)
        first[1:] = s[1:] != s[:-1]
        successor[s[first]] = d[first]
    value.setflags(write=False)
    successor.setflags(write=False)
    return Wavefront(value, successor, goal)


# --------------------------------------------------------------------------
# serialization


def save_roadmap(roadmap: RoadmapWithGaps, path) -> None:
    """Binary file: magic, u64 header length, JSON header, then raw
    little-endian arrays (vertices f64, src i64, dst i64, cost f64)."""
    header = dict(roadmap.meta)
    header["format_version"] = FORMAT_VERSION
    header["n_vertices"] = roadmap.n_vertices
    header["n_edges"] = roadmap.n_edges
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(FORMAT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(roadmap.vertices.astype("<f8").tobytes())
        fh.write(roadmap.src.astype("<i8").tobytes())
        fh.write(roadmap.dst.astype("<i8").tobytes())
        fh.write(roadmap.cost.astype("<f8").tobytes())


def read_roadmap_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path) -> dict:
    magic = fh.read(len(FORMAT_MAGIC))
    if magic != FORMAT_MAGIC:
        raise RoadmapFormatError(f"{path}: not a roadmap file")
    (hlen,) = struct.unpack("<Q", fh.read(8))
    try:
        header = json.loads(fh.read(hlen))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise RoadmapFormatError(f"{path}: malformed header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise RoadmapFormatError(
            f"{path}: format version {header.get('format_version')} != {FORMAT_VERSION}")
    return header


def load_roadmap(path, env: Environment | None = None) -> RoadmapWithGaps:
    """Read a roadmap; with ``env`` given, reject files built for other geometry."""
    path = Path(path)
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        try:
            nv, ne = int(header["n_vertices"]), int(header["n_edges"])
        except (KeyError, ValueError) as exc:
            raise RoadmapFormatError(f"{path}: header lacks counts") from exc
        body = fh.read()
    expected = nv * 3 * 8 + ne * 3 * 8
    if len(body) != expected:
        raise RoadmapFormatError(f"{path}: expected {expected} payload bytes, found {len(body)}")
    if env is not None and header.get("env_hash") != env.content_hash():
        raise RoadmapFormatError(f"{path}: environment hash mismatch")
    off = 0
    vertices = np.frombuffer(body, "<f8", nv * 3, off).reshape(nv, 3)
    off += nv * 24
    src = np.frombuffer(body, "<i8", ne, off)
    off += ne * 8
    dst = np.frombuffer(body, "<i8", ne, off)
    off += ne * 8
    cost = np.frombuffer(body, "<f8", ne, off)
    meta = {k: v for k, v in header.items() if k not in ("n_vertices", "n_edges")}
    return RoadmapWithGaps(vertices.copy(), src.copy(), dst.copy(), cost.copy(), meta)
