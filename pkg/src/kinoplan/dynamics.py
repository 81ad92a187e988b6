"""Analytical vehicle models and forward propagation.

Two second-order vehicles share a 5-D state ``(x, y, theta, v, w_or_delta)``
and a 2-D control.  Integration is fixed-step RK4 with the velocity-like
components clamped after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as K
from .core import DEFAULT_DT, Control, Plan, Trajectory


class PropagationDiverged(RuntimeError):
    """Raised when integration produces a non-finite state."""


@dataclass(frozen=True)
class SystemModel:
    name: str
    kind: int
    v_max: float = 3.0
    # diff-drive: angular-rate limit; car-like: steering-angle limit
    rate_max: float = 2.0
    a_max: float = 1.0
    # diff-drive: angular acceleration; car-like: steering rate
    rate_dot_max: float = 1.0
    wheelbase: float = 0.3
    dt: float = DEFAULT_DT
    dim_x: int = 5
    dim_u: int = 2
    _params: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vals = (self.v_max, self.rate_max, self.a_max, self.rate_dot_max, self.wheelbase, self.dt)
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise ValueError("system bounds must be finite and positive")
        wb = self.wheelbase if self.kind == K.CAR_LIKE else 0.0
        p = np.array([self.v_max, self.rate_max, self.a_max, self.rate_dot_max, wb])
        p.setflags(write=False)
        object.__setattr__(self, "_params", p)

    @property
    def params(self) -> np.ndarray:
        return self._params

    @property
    def control_lo(self) -> np.ndarray:
        return np.array([-self.a_max, -self.rate_dot_max])

    @property
    def control_hi(self) -> np.ndarray:
        return np.array([self.a_max, self.rate_dot_max])

    @property
    def velocity_bounds(self) -> np.ndarray:
        return np.array([[-self.v_max, self.v_max], [-self.rate_max, self.rate_max]])

    @property
    def max_speed(self) -> float:
        return self.v_max

    def with_params(self, **overrides) -> "SystemModel":
        return replace(self, **overrides)

    def derivative(self, x, u) -> np.ndarray:
        out = np.empty(self.dim_x)
        K.deriv(self.kind, self._params, np.asarray(x, float), np.asarray(u, float), out)
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "v_max": self.v_max,
            "rate_max": self.rate_max,
            "a_max": self.a_max,
            "rate_dot_max": self.rate_dot_max,
            "wheelbase": self.wheelbase,
            "dt": self.dt,
        }


def diff_drive(**overrides) -> SystemModel:
    """Second-order differential drive: (x, y, theta, v, w), controls (a, alpha)."""
    return SystemModel(name="diff_drive", kind=K.DIFF_DRIVE, **overrides)


def car_like(**overrides) -> SystemModel:
    """Kinematic bicycle with acceleration and steering-rate inputs:
    (x, y, theta, v, delta), controls (a, delta_dot)."""
    params = {"rate_max": 0.5, "rate_dot_max": 1.0}
    params.update(overrides)
    return SystemModel(name="car_like", kind=K.CAR_LIKE, **params)


SYSTEMS = {"diff_drive": diff_drive, "car_like": car_like}


def make_system(name: str, params: dict | None = None) -> SystemModel:
    aliases = {"diffdrive": "diff_drive", "diff-drive": "diff_drive", "car": "car_like", "car-like": "car_like"}
    key = aliases.get(name, name)
    if key not in SYSTEMS:
        raise ValueError(f"unknown system {name!r}; expected one of {sorted(SYSTEMS)}")
    params = {k: v for k, v in (params or {}).items() if k != "name"}
    return SYSTEMS[key](**params)


def n_steps_for(duration: float, dt: float) -> int:
    """Steps needed to cover ``duration``, rounded up to whole timesteps."""
    return max(1, int(math.ceil(duration / dt - 1e-9)))


def propagate(x, u: Control, system: SystemModel) -> Trajectory:
    """Integrate constant control ``u`` from ``x`` and return the trajectory."""
    x = np.asarray(x, dtype=np.float64)
    vals = np.asarray(u.values, dtype=np.float64)
    if np.any(vals < system.control_lo - 1e-12) or np.any(vals > system.control_hi + 1e-12):
        raise ValueError(f"control {vals} outside bounds")
    states, ok = K.integrate(system.kind, system.params, x, vals, n_steps_for(u.duration, system.dt), system.dt)
    if not ok:
        raise PropagationDiverged(f"non-finite state while propagating from {x}")
    return Trajectory(states, system.dt)


def replay(x0, plan: Plan, system: SystemModel) -> Trajectory:
    """Propagate every control of ``plan`` in order from ``x0``."""
    x = np.asarray(x0, dtype=np.float64)
    chunks = [x[None, :]]
    for vals, dur in zip(plan.values, plan.durations):
        states, ok = K.integrate(system.kind, system.params, x, np.ascontiguousarray(vals),
                                 n_steps_for(dur, system.dt), system.dt)
        if not ok:
            raise PropagationDiverged("non-finite state during plan replay")
        chunks.append(states[1:])
        x = states[-1]
    return Trajectory(np.concatenate(chunks), system.dt)


def sample_control(system: SystemModel, rng: np.random.Generator, max_duration: float,
                   min_duration: float | None = None) -> Control:
    """Uniform control inside the bounds with a duration drawn uniformly from
    the timestep multiples in ``[min_duration, max_duration]``."""
    dt = system.dt
    if max_duration < dt - 1e-12:
        raise ValueError("max_duration must cover at least one timestep")
    hi_steps = int(math.floor(max_duration / dt + 1e-9))
    lo_steps = 1 if min_duration is None else max(1, n_steps_for(min_duration, dt))
    lo_steps = min(lo_steps, hi_steps)
    values = rng.uniform(system.control_lo, system.control_hi)
    steps = int(rng.integers(lo_steps, hi_steps + 1))
    return Control(values, steps * dt)
