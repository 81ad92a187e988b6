"""Value types shared by every planning module.

States and controls are plain float vectors whose layout is owned by the
system model; configurations are SE(2) poses.  Everything here is immutable
once constructed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

#: Integration / storage timestep in seconds.
DEFAULT_DT = 0.02
#: Goal tolerance used for every system.
DEFAULT_EPS = 0.5


def wrap_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    t = math.fmod(theta, 2.0 * math.pi)
    if t <= -math.pi:
        t += 2.0 * math.pi
    elif t > math.pi:
        t -= 2.0 * math.pi
    return t


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DistanceWeights:
    xy: float = 1.0
    theta: float = 0.5

    def __post_init__(self):
        if not (self.xy > 0 and self.theta > 0):
            raise ValueError("distance weights must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.xy, self.theta], dtype=np.float64)


DEFAULT_WEIGHTS = DistanceWeights()


@dataclass(frozen=True)
class Configuration:
    """Planar pose; ``theta`` is normalized at construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        for name in ("x", "y", "theta"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite configuration component {name}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def from_seq(cls, seq: Sequence[float]) -> "Configuration":
        return cls(float(seq[0]), float(seq[1]), float(seq[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=np.float64)

    def __iter__(self):
        return iter((self.x, self.y, self.theta))

    def __getitem__(self, i):
        return (self.x, self.y, self.theta)[i]

    def __len__(self):
        return 3


@dataclass(frozen=True)
class State:
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise ValueError("state must be a finite 1-D vector")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def __eq__(self, other):
        return isinstance(other, State) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())


@dataclass(frozen=True)
class Control:
    values: np.ndarray
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if not self.duration > 0:
            raise ValueError("control duration must be positive")
        object.__setattr__(self, "duration", float(self.duration))

    def __eq__(self, other):
        return (
            isinstance(other, Control)
            and self.duration == other.duration
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return hash((self.values.tobytes(), self.duration))


@dataclass(frozen=True)
class Trajectory:
    """States sampled every ``dt`` seconds, first state included."""

    states: np.ndarray
    dt: float = DEFAULT_DT

    def __post_init__(self):
        s = _frozen(self.states)
        if s.ndim != 2 or len(s) == 0:
            raise ValueError("trajectory needs at least one state")
        object.__setattr__(self, "states", s)

    @property
    def total_duration(self) -> float:
        return (len(self.states) - 1) * self.dt

    @property
    def start(self) -> np.ndarray:
        return self.states[0]

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self):
        return len(self.states)


@dataclass(frozen=True)
class Plan:
    """Piecewise-constant control sequence.

    Stored column-wise: ``values`` is (n, dim_u) and ``durations`` is (n,).
    """

    values: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        d = np.array(self.durations, dtype=np.float64).reshape(-1)
        if v.ndim == 1:
            v = v.reshape(len(d), -1) if len(d) else v.reshape(0, 0)
        if len(v) != len(d):
            raise ValueError("plan values/durations length mismatch")
        if np.any(d <= 0):
            raise ValueError("control durations must be positive")
        v.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "durations", d)

    @classmethod
    def empty(cls, dim_u: int = 2) -> "Plan":
        return cls(np.zeros((0, dim_u)), np.zeros(0))

    @classmethod
    def from_controls(cls, controls: Sequence[Control], dim_u: int = 2) -> "Plan":
        if not controls:
            return cls.empty(dim_u)
        return cls(
            np.array([c.values for c in controls]), np.array([c.duration for c in controls])
        )

    @classmethod
    def concat(cls, plans: Sequence["Plan"], dim_u: int = 2) -> "Plan":
        plans = [p for p in plans if len(p)]
        if not plans:
            return cls.empty(dim_u)
        return cls(
            np.concatenate([p.values for p in plans]),
            np.concatenate([p.durations for p in plans]),
        )

    @property
    def total_duration(self) -> float:
        return float(np.sum(self.durations))

    @property
    def controls(self) -> list[Control]:
        return [Control(v, d) for v, d in zip(self.values, self.durations)]

    def __len__(self):
        return len(self.durations)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "durations": self.durations.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Plan":
        values = np.array(d["values"], dtype=np.float64)
        durations = np.array(d["durations"], dtype=np.float64)
        if len(durations) == 0:
            return cls.empty()
        return cls(values, durations)


@dataclass(frozen=True)
class Query:
    start: np.ndarray
    goal: Configuration
    epsilon: float = DEFAULT_EPS
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "start", _frozen(self.start))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def distance(q1, q2, weights: DistanceWeights = DEFAULT_WEIGHTS) -> float:
    """Weighted SE(2) distance; angle differences go through :func:`wrap_angle`."""
    x1, y1, t1 = q1
    x2, y2, t2 = q2
    dth = wrap_angle(t2 - t1)
    return math.sqrt(
        weights.xy * ((x2 - x1) ** 2 + (y2 - y1) ** 2) + weights.theta * dth * dth
    )


def goal_satisfied(x, q_goal, eps: float = DEFAULT_EPS, weights=DEFAULT_WEIGHTS) -> bool:
    if not eps > 0:
        raise ValueError("eps must be positive")
    values = x.values if isinstance(x, State) else x
    return distance((values[0], values[1], values[2]), q_goal, weights) < eps
