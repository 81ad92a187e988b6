"""Goal-conditioned steering controllers and controller rollouts.

The controller only knows the vehicle and a target pose; obstacles enter
through the rollout, which stops at the first colliding state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np

from . import _kernels as K
from .core import DEFAULT_EPS, DEFAULT_WEIGHTS, Control, DistanceWeights, Plan, Trajectory, goal_satisfied
from .dynamics import PropagationDiverged, SystemModel
from .environment import Environment, is_state_free


class GoalConditionedController(Protocol):
    def step(self, x, q_goal, system: SystemModel) -> Control:
        """One-timestep control driving ``x`` toward configuration ``q_goal``."""


@dataclass(frozen=True)
class PoseController:
    """Polar pose-regulation law ``v = k_rho*rho``, ``w = k_alpha*alpha + k_beta*beta``.

    Second-order vehicles track the commanded velocities with proportional
    accelerations (``k_v``, ``k_w``; ``k_delta`` for the steering angle).
    """

    k_rho: float = 0.9
    k_alpha: float = 2.0
    k_beta: float = -0.6
    k_v: float = 2.0
    k_w: float = 2.0
    k_delta: float = 4.0
    v_turn: float = 0.5
    align_radius: float = 0.3

    def __post_init__(self):
        if not (self.k_rho > 0 and self.k_beta < 0 and self.k_alpha > self.k_rho):
            raise ValueError("pose controller gains must satisfy k_rho>0, k_beta<0, k_alpha>k_rho")
        if not (self.k_v > 0 and self.k_w > 0 and self.k_delta > 0 and self.v_turn > 0
                and self.align_radius >= 0):
            raise ValueError("tracking gains must be positive")

    @property
    def gains(self) -> np.ndarray:
        return np.array(
            [self.k_rho, self.k_alpha, self.k_beta, self.k_v, self.k_w, self.k_delta,
             self.v_turn, self.align_radius]
        )

    def to_dict(self) -> dict:
        return {
            "k_rho": self.k_rho, "k_alpha": self.k_alpha, "k_beta": self.k_beta,
            "k_v": self.k_v, "k_w": self.k_w, "k_delta": self.k_delta, "v_turn": self.v_turn,
            "align_radius": self.align_radius,
        }

    def commanded_velocity(self, x, q_goal, system: SystemModel) -> tuple[float, float]:
        """Kinematic command (v, w) before the acceleration-tracking layer."""
        return K.commanded_velocity(
            system.kind, system.params, self.gains, np.asarray(x, float), np.asarray(q_goal, float)
        )

    def step(self, x, q_goal, system: SystemModel) -> Control:
        u = np.empty(2)
        K.control_step(system.kind, system.params, self.gains, system.control_lo, system.control_hi,
                       np.asarray(x, float), np.asarray(tuple(q_goal), float), u)
        return Control(u, system.dt)


def control_step(x, q_goal, ctrl, system: SystemModel) -> Control:
    return ctrl.step(x, q_goal, system)


class RolloutResult(NamedTuple):
    trajectory: Trajectory
    plan: Plan
    reached: bool
    collided: bool

    @property
    def duration(self) -> float:
        return self.trajectory.total_duration


def rollout_to_goal(x, q_goal, t_max: float, env: Environment, ctrl, system: SystemModel,
                    eps: float = DEFAULT_EPS, weights: DistanceWeights = DEFAULT_WEIGHTS,
                    check_collision: bool = True) -> RolloutResult:
    """Apply ``ctrl`` one timestep at a time until the goal ball, a collision,
    or ``t_max`` seconds, whichever comes first."""
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    x = np.asarray(x, dtype=np.float64)
    goal = np.asarray(tuple(q_goal), dtype=np.float64)
    max_steps = int(round(t_max / system.dt))
    if isinstance(ctrl, PoseController):
        states = np.empty((max_steps + 1, system.dim_x))
        controls = np.empty((max_steps, system.dim_u))
        n, status = K.rollout(
            system.kind, system.params, ctrl.gains, system.control_lo, system.control_hi,
            x, goal, eps, weights.as_array(), max_steps, system.dt, check_collision, *env.arrays,
            states, controls,
        )
        if status == K.ST_DIVERGED:
            raise PropagationDiverged("non-finite state during controller rollout")
        traj = Trajectory(states[:n].copy(), system.dt)
        plan = Plan(controls[: n - 1].copy(), np.full(n - 1, system.dt))
        return RolloutResult(traj, plan, status == K.ST_REACHED, status == K.ST_COLLIDED)
    return _generic_rollout(x, goal, max_steps, env, ctrl, system, eps, weights, check_collision)


def _generic_rollout(x, goal, max_steps, env, ctrl, system, eps, weights, check_collision):
    # Python path for controllers without a compiled kernel (e.g. learned policies).
    states = [x]
    controls = []
    if goal_satisfied(x, goal, eps, weights):
        return RolloutResult(Trajectory(np.array(states), system.dt), Plan.empty(system.dim_u), True, False)
    reached = collided = False
    s = x
    nxt = np.empty(system.dim_x)
    for _ in range(max_steps):
        u = np.clip(np.asarray(ctrl.step(s, goal, system).values, float), system.control_lo, system.control_hi)
        K.rk4_step(system.kind, system.params, s, u, system.dt, nxt)
        if not np.all(np.isfinite(nxt)):
            raise PropagationDiverged("non-finite state during controller rollout")
        s = nxt.copy()
        states.append(s)
        controls.append(u)
        if check_collision and not is_state_free(s, env):
            collided = True
            break
        if goal_satisfied(s, goal, eps, weights):
            reached = True
            break
    plan = Plan(np.array(controls).reshape(-1, system.dim_u), np.full(len(controls), system.dt))
    return RolloutResult(Trajectory(np.array(states), system.dt), plan, reached, collided)
