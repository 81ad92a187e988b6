"""2-D workspaces with convex polygon obstacles and a rectangular footprint.

Environment files are JSON::

    {
      "name": "narrow",
      "bounds": [x_min, x_max, y_min, y_max],
      "footprint": {"length": 0.5, "width": 0.4},
      "obstacles": [[[x, y], [x, y], ...], ...]
    }

Obstacles must be convex and non-degenerate; clockwise polygons are
reoriented.  Errors name the line of the offending polygon.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .core import Configuration, State, Trajectory


class EnvironmentFileError(ValueError):
    """Malformed or invalid environment file."""


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def check_convex(poly) -> np.ndarray:
    """Return the polygon as a CCW (n, 2) array or raise ``ValueError``."""
    poly = np.asarray(poly, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise ValueError("polygon needs at least 3 (x, y) vertices")
    if not np.all(np.isfinite(poly)):
        raise ValueError("polygon has non-finite vertices")
    area = _signed_area(poly)
    if abs(area) < 1e-12:
        raise ValueError("degenerate polygon (zero area)")
    if area < 0:
        poly = poly[::-1].copy()
    n = len(poly)
    for i in range(n):
        a, b, c = poly[i], poly[(i + 1) % n], poly[(i + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross < -1e-12:
            raise ValueError("polygon is not convex")
        if np.allclose(a, b):
            raise ValueError("polygon has repeated vertices")
    return poly


@dataclass(frozen=True)
class Environment:
    bounds: tuple[float, float, float, float]
    obstacles: tuple[np.ndarray, ...] = ()
    footprint: tuple[float, float] = (0.5, 0.4)
    name: str = ""
    _arrays: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        b = tuple(float(v) for v in self.bounds)
        if len(b) != 4 or not (b[0] < b[1] and b[2] < b[3]):
            raise ValueError(f"invalid bounds {self.bounds}")
        object.__setattr__(self, "bounds", b)
        obs = []
        for poly in self.obstacles:
            p = check_convex(poly)
            p.setflags(write=False)
            obs.append(p)
        object.__setattr__(self, "obstacles", tuple(obs))
        fp = (float(self.footprint[0]), float(self.footprint[1]))
        if fp[0] < 0 or fp[1] < 0:
            raise ValueError("footprint dimensions must be non-negative")
        object.__setattr__(self, "footprint", fp)

        max_v = max((len(p) for p in obs), default=3)
        poly = np.zeros((len(obs), max_v, 2))
        nverts = np.zeros(len(obs), dtype=np.int64)
        aabb = np.zeros((len(obs), 4))
        for i, p in enumerate(obs):
            poly[i, : len(p)] = p
            nverts[i] = len(p)
            aabb[i] = (p[:, 0].min(), p[:, 0].max(), p[:, 1].min(), p[:, 1].max())
        arrays = (np.array(b), np.array(fp), poly, nverts, aabb)
        object.__setattr__(self, "_arrays", arrays)

    @property
    def arrays(self):
        """(bounds, footprint, polygons, vertex counts, obstacle AABBs) for kernels."""
        return self._arrays

    @property
    def width(self) -> float:
        return self.bounds[1] - self.bounds[0]

    @property
    def height(self) -> float:
        return self.bounds[3] - self.bounds[2]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "bounds": list(self.bounds),
            "footprint": {"length": self.footprint[0], "width": self.footprint[1]},
            "obstacles": [p.tolist() for p in self.obstacles],
        }

    def content_hash(self) -> str:
        """SHA-256 over geometry only (name excluded)."""
        d = self.to_dict()
        d.pop("name")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_obstacles(self, obstacles) -> "Environment":
        return Environment(self.bounds, tuple(obstacles), self.footprint, self.name)


def _obstacle_line_numbers(text: str) -> list[int]:
    """Line number (1-based) where each element of the top-level ``obstacles``
    array starts; empty if the array can't be located."""
    key = text.find('"obstacles"')
    if key < 0:
        return []
    i = text.find("[", key)
    if i < 0:
        return []
    dec = json.JSONDecoder()
    lines = []
    i += 1
    while i < len(text):
        while i < len(text) and text[i] in " \t\r\n,":
            i += 1
        if i >= len(text) or text[i] == "]":
            break
        lines.append(text.count("\n", 0, i) + 1)
        try:
            _, i = dec.raw_decode(text, i)
        except json.JSONDecodeError:
            break
    return lines


def parse_environment(text: str, source: str = "<string>") -> Environment:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EnvironmentFileError(f"{source}:{exc.lineno}: malformed JSON: {exc.msg}") from exc
    for key in ("bounds", "obstacles", "footprint"):
        if key not in data:
            raise EnvironmentFileError(f"{source}: missing field {key!r}")
    lines = _obstacle_line_numbers(text)
    polys = []
    for idx, poly in enumerate(data["obstacles"]):
        try:
            polys.append(check_convex(poly))
        except ValueError as exc:
            line = lines[idx] if idx < len(lines) else "?"
            raise EnvironmentFileError(f"{source}:{line}: obstacle {idx}: {exc}") from None
    fp = data["footprint"]
    try:
        return Environment(
            tuple(data["bounds"]), tuple(polys), (fp["length"], fp["width"]), data.get("name", "")
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise EnvironmentFileError(f"{source}: {exc}") from None


def load_environment(path) -> Environment:
    path = Path(path)
    return parse_environment(path.read_text(), str(path))


def save_environment(env: Environment, path) -> None:
    Path(path).write_text(json.dumps(env.to_dict(), indent=1) + "\n")


# --------------------------------------------------------------------------
# state <-> configuration


def map_to_config(x) -> Configuration:
    values = x.values if isinstance(x, State) else x
    return Configuration(values[0], values[1], values[2])


def lift_config(q, dim_x: int = 5) -> np.ndarray:
    """Rest state at configuration ``q`` (all dynamic terms zero)."""
    x = np.zeros(dim_x)
    x[0], x[1] = q[0], q[1]
    x[2] = K.wrap(float(q[2]))
    return x


# --------------------------------------------------------------------------
# collision queries


def is_state_free(x, env: Environment) -> bool:
    values = x.values if isinstance(x, State) else x
    return bool(K.state_free(float(values[0]), float(values[1]), float(values[2]), *env.arrays))


def is_config_free(q, env: Environment) -> bool:
    return bool(K.state_free(float(q[0]), float(q[1]), float(q[2]), *env.arrays))


def is_trajectory_free(tau, env: Environment) -> bool:
    states = tau.states if isinstance(tau, Trajectory) else np.asarray(tau, dtype=np.float64)
    if len(states) == 0:
        raise ValueError("empty trajectory")
    return bool(K.states_free(np.ascontiguousarray(states), *env.arrays))


def sample_free_config(env: Environment, rng: np.random.Generator, max_tries: int = 10_000) -> np.ndarray:
    """Uniform sample over bounds x S^1, rejected until collision-free."""
    lo = np.array([env.bounds[0], env.bounds[2], -math.pi])
    hi = np.array([env.bounds[1], env.bounds[3], math.pi])
    for _ in range(max_tries):
        q = rng.uniform(lo, hi)
        if K.state_free(q[0], q[1], q[2], *env.arrays):
            return q
    raise RuntimeError("could not sample a free configuration")
