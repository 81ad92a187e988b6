"""Compiled inner loops: vehicle ODEs, RK4, pose controller, SAT footprint test,
and controller rollouts.

Everything here works on flat float64 arrays so numba can compile it.  The
public modules wrap these with typed objects.

Layouts
-------
sys params ``p``      diff-drive: [v_max, w_max, a_max, alpha_max, 0]
                      car-like:   [v_max, delta_max, a_max, ddelta_max, wheelbase]
gains ``g``           [k_rho, k_alpha, k_beta, k_v, k_w, k_delta, v_turn, align_radius]
weights ``w``         [w_xy, w_theta]
env ``bounds``        [x_min, x_max, y_min, y_max]
env ``foot``          [length, width]
env ``poly``          (n_obs, max_verts, 2), CCW, padded
env ``nverts``        (n_obs,) int64
env ``aabb``          (n_obs, 4) [x_min, x_max, y_min, y_max]
"""

import math

import numpy as np
from numba import njit

DIFF_DRIVE = 0
CAR_LIKE = 1

ST_TIMEOUT = 0
ST_REACHED = 1
ST_COLLIDED = 2
ST_DIVERGED = 3

PI = math.pi
TWO_PI = 2.0 * math.pi


@njit(cache=True)
def wrap(t):
    t = np.fmod(t, TWO_PI)
    if t <= -PI:
        t += TWO_PI
    elif t > PI:
        t -= TWO_PI
    return t


@njit(cache=True)
def clip(v, lo, hi):
    if v < lo:
        return lo
    if v > hi:
        return hi
    return v


@njit(cache=True)
def config_distance(x, y, t, gx, gy, gt, w):
    dx = gx - x
    dy = gy - y
    dth = wrap(gt - t)
    return math.sqrt(w[0] * (dx * dx + dy * dy) + w[1] * dth * dth)


# --------------------------------------------------------------------------
# dynamics


@njit(cache=True)
def deriv(sys_id, p, s, u, out):
    v = s[3]
    th = s[2]
    out[0] = v * math.cos(th)
    out[1] = v * math.sin(th)
    if sys_id == DIFF_DRIVE:
        out[2] = s[4]
    else:
        out[2] = v / p[4] * math.tan(s[4])
    out[3] = u[0]
    out[4] = u[1]


@njit(cache=True)
def clamp_state(sys_id, p, s):
    s[2] = wrap(s[2])
    s[3] = clip(s[3], -p[0], p[0])
    s[4] = clip(s[4], -p[1], p[1])


@njit(cache=True)
def rk4_step(sys_id, p, s, u, dt, out):
    n = s.shape[0]
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    deriv(sys_id, p, s, u, k1)
    for i in range(n):
        tmp[i] = s[i] + 0.5 * dt * k1[i]
    deriv(sys_id, p, tmp, u, k2)
    for i in range(n):
        tmp[i] = s[i] + 0.5 * dt * k2[i]
    deriv(sys_id, p, tmp, u, k3)
    for i in range(n):
        tmp[i] = s[i] + dt * k3[i]
    deriv(sys_id, p, tmp, u, k4)
    for i in range(n):
        out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    clamp_state(sys_id, p, out)


@njit(cache=True)
def finite(s):
    for i in range(s.shape[0]):
        if not math.isfinite(s[i]):
            return False
    return True


@njit(cache=True)
def integrate(sys_id, p, x0, u, n_steps, dt):
    """Constant-control integration; returns (n_steps+1, dim) and ok flag."""
    out = np.empty((n_steps + 1, x0.shape[0]))
    out[0] = x0
    for k in range(n_steps):
        rk4_step(sys_id, p, out[k], u, dt, out[k + 1])
        if not finite(out[k + 1]):
            return out[: k + 2], False
    return out, True


# --------------------------------------------------------------------------
# collision


@njit(cache=True)
def state_free(x, y, th, bounds, foot, poly, nverts, aabb):
    c = math.cos(th)
    s = math.sin(th)
    hl = 0.5 * foot[0]
    hw = 0.5 * foot[1]
    cx = np.empty(4)
    cy = np.empty(4)
    # corners: (+l,+w) (-l,+w) (-l,-w) (+l,-w)
    sl = (1.0, -1.0, -1.0, 1.0)
    sw = (1.0, 1.0, -1.0, -1.0)
    rx0 = np.inf
    rx1 = -np.inf
    ry0 = np.inf
    ry1 = -np.inf
    for k in range(4):
        cx[k] = x + sl[k] * hl * c - sw[k] * hw * s
        cy[k] = y + sl[k] * hl * s + sw[k] * hw * c
        if cx[k] < bounds[0] or cx[k] > bounds[1] or cy[k] < bounds[2] or cy[k] > bounds[3]:
            return False
        rx0 = min(rx0, cx[k])
        rx1 = max(rx1, cx[k])
        ry0 = min(ry0, cy[k])
        ry1 = max(ry1, cy[k])
    for o in range(nverts.shape[0]):
        if aabb[o, 1] < rx0 or aabb[o, 0] > rx1 or aabb[o, 3] < ry0 or aabb[o, 2] > ry1:
            continue
        if rect_poly_overlap(x, y, c, s, hl, hw, cx, cy, poly[o], nverts[o]):
            return False
    return True


@njit(cache=True)
def rect_poly_overlap(x, y, c, s, hl, hw, cx, cy, verts, nv):
    # rectangle axes: projections of the rectangle are centre +- half extent
    for a in range(2):
        if a == 0:
            ax = c
            ay = s
            h = hl
        else:
            ax = -s
            ay = c
            h = hw
        centre = ax * x + ay * y
        pmin = np.inf
        pmax = -np.inf
        for i in range(nv):
            d = ax * verts[i, 0] + ay * verts[i, 1]
            pmin = min(pmin, d)
            pmax = max(pmax, d)
        if pmax < centre - h or pmin > centre + h:
            return False
    # polygon edge normals
    for i in range(nv):
        j = i + 1 if i + 1 < nv else 0
        ex = verts[j, 0] - verts[i, 0]
        ey = verts[j, 1] - verts[i, 1]
        ax = ey
        ay = -ex
        qmin = np.inf
        qmax = -np.inf
        for k in range(nv):
            d = ax * verts[k, 0] + ay * verts[k, 1]
            qmin = min(qmin, d)
            qmax = max(qmax, d)
        rmin = np.inf
        rmax = -np.inf
        for k in range(4):
            d = ax * cx[k] + ay * cy[k]
            rmin = min(rmin, d)
            rmax = max(rmax, d)
        if rmax < qmin or rmin > qmax:
            return False
    return True


@njit(cache=True)
def states_free(states, bounds, foot, poly, nverts, aabb):
    for k in range(states.shape[0]):
        if not state_free(states[k, 0], states[k, 1], states[k, 2], bounds, foot, poly, nverts, aabb):
            return False
    return True


@njit(cache=True)
def states_free_mask(states, bounds, foot, poly, nverts, aabb):
    out = np.empty(states.shape[0], dtype=np.bool_)
    for k in range(states.shape[0]):
        out[k] = state_free(states[k, 0], states[k, 1], states[k, 2], bounds, foot, poly, nverts, aabb)
    return out


# --------------------------------------------------------------------------
# pose-reaching controller


@njit(cache=True)
def commanded_velocity(sys_id, p, g, s, goal):
    """Kinematic (v_cmd, w_cmd) of the polar pose controller."""
    dx = goal[0] - s[0]
    dy = goal[1] - s[1]
    rho = math.sqrt(dx * dx + dy * dy)
    if rho < 1e-9:
        alpha = 0.0
        beta = wrap(goal[2] - s[2])
    else:
        alpha = wrap(math.atan2(dy, dx) - s[2])
        beta = wrap(goal[2] - s[2] - alpha)
    if sys_id == DIFF_DRIVE and rho < g[7]:
        # close enough: stop translating and align heading in place
        v_cmd = 0.0
        w_cmd = g[1] * wrap(goal[2] - s[2])
    elif abs(alpha) > 0.5 * PI:
        # goal behind: turn first, never reverse
        if sys_id == DIFF_DRIVE:
            v_cmd = 0.0
            w_cmd = g[1] * alpha
        else:
            v_cmd = g[6]
            w_cmd = math.copysign(g[6] * math.tan(p[1]) / p[4], alpha)
    else:
        v_cmd = g[0] * rho
        w_cmd = g[1] * alpha + g[2] * beta
    v_cmd = clip(v_cmd, 0.0, p[0])
    if sys_id == DIFF_DRIVE:
        w_cmd = clip(w_cmd, -p[1], p[1])
    return v_cmd, w_cmd


@njit(cache=True)
def control_step(sys_id, p, g, lo, hi, s, goal, u):
    v_cmd, w_cmd = commanded_velocity(sys_id, p, g, s, goal)
    u[0] = clip(g[3] * (v_cmd - s[3]), lo[0], hi[0])
    if sys_id == DIFF_DRIVE:
        u[1] = clip(g[4] * (w_cmd - s[4]), lo[1], hi[1])
    else:
        kappa = w_cmd / max(v_cmd, 0.1)
        d_cmd = clip(math.atan(p[4] * kappa), -p[1], p[1])
        u[1] = clip(g[5] * (d_cmd - s[4]), lo[1], hi[1])


@njit(cache=True)
def rollout(sys_id, p, g, lo, hi, x0, goal, eps, w, max_steps, dt,
            check, bounds, foot, poly, nverts, aabb, states, controls):
    """Apply the controller until goal ball, collision or ``max_steps``.

    ``states`` must hold max_steps+1 rows, ``controls`` max_steps rows.
    Returns (number of stored states, status).  A colliding state, when
    present, is the last stored one.
    """
    states[0] = x0
    if config_distance(x0[0], x0[1], x0[2], goal[0], goal[1], goal[2], w) < eps:
        return 1, ST_REACHED
    u = np.empty(2)
    for k in range(max_steps):
        control_step(sys_id, p, g, lo, hi, states[k], goal, u)
        controls[k, 0] = u[0]
        controls[k, 1] = u[1]
        rk4_step(sys_id, p, states[k], u, dt, states[k + 1])
        s = states[k + 1]
        if not finite(s):
            return k + 2, ST_DIVERGED
        if check and not state_free(s[0], s[1], s[2], bounds, foot, poly, nverts, aabb):
            return k + 2, ST_COLLIDED
        if config_distance(s[0], s[1], s[2], goal[0], goal[1], goal[2], w) < eps:
            return k + 2, ST_REACHED
    return max_steps + 1, ST_TIMEOUT


@njit(cache=True)
def rollout_status(sys_id, p, g, lo, hi, x0, goal, eps, w, max_steps, dt,
                   bounds, foot, poly, nverts, aabb):
    """Like :func:`rollout` but keeps only the current state; returns (steps, status)."""
    n = x0.shape[0]
    s = x0.copy()
    nxt = np.empty(n)
    if config_distance(s[0], s[1], s[2], goal[0], goal[1], goal[2], w) < eps:
        return 0, ST_REACHED
    u = np.empty(2)
    for k in range(max_steps):
        control_step(sys_id, p, g, lo, hi, s, goal, u)
        rk4_step(sys_id, p, s, u, dt, nxt)
        for i in range(n):
            s[i] = nxt[i]
        if not finite(s):
            return k + 1, ST_DIVERGED
        if not state_free(s[0], s[1], s[2], bounds, foot, poly, nverts, aabb):
            return k + 1, ST_COLLIDED
        if config_distance(s[0], s[1], s[2], goal[0], goal[1], goal[2], w) < eps:
            return k + 1, ST_REACHED
    return max_steps, ST_TIMEOUT


@njit(cache=True)
def connect_pairs(sys_id, p, g, lo, hi, starts, goals, eps, w, max_steps, dt,
                  bounds, foot, poly, nverts, aabb):
    """Batch of independent rollouts: starts[k] toward goals[k]."""
    m = starts.shape[0]
    steps = np.empty(m, dtype=np.int64)
    status = np.empty(m, dtype=np.int64)
    for k in range(m):
        steps[k], status[k] = rollout_status(
            sys_id, p, g, lo, hi, starts[k], goals[k], eps, w, max_steps, dt,
            bounds, foot, poly, nverts, aabb)
    return steps, status


@njit(cache=True)
def propagate_checked(sys_id, p, x0, u, n_steps, dt, goal, eps, w,
                      bounds, foot, poly, nverts, aabb):
    """Constant control with per-step collision and goal checks.

    Stops at the first goal state (status REACHED) or colliding state
    (status COLLIDED, colliding state included).
    """
    out = np.empty((n_steps + 1, x0.shape[0]))
    out[0] = x0
    for k in range(n_steps):
        rk4_step(sys_id, p, out[k], u, dt, out[k + 1])
        s = out[k + 1]
        if not finite(s):
            return out[: k + 2], ST_DIVERGED
        if not state_free(s[0], s[1], s[2], bounds, foot, poly, nverts, aabb):
            return out[: k + 2], ST_COLLIDED
        if config_distance(s[0], s[1], s[2], goal[0], goal[1], goal[2], w) < eps:
            return out[: k + 2], ST_REACHED
    return out, ST_TIMEOUT


@njit(cache=True)
def first_goal_index(states, goal, eps, w):
    for k in range(states.shape[0]):
        if config_distance(states[k, 0], states[k, 1], states[k, 2], goal[0], goal[1], goal[2], w) < eps:
            return k
    return -1


# --------------------------------------------------------------------------
# nearest neighbour (linear scan, weighted SE(2))


@njit(cache=True)
def nearest(configs, n, q, w):
    best = -1
    bd = np.inf
    for i in range(n):
        dx = q[0] - configs[i, 0]
        dy = q[1] - configs[i, 1]
        dth = wrap(q[2] - configs[i, 2])
        d = w[0] * (dx * dx + dy * dy) + w[1] * dth * dth
        if d < bd:
            bd = d
            best = i
    return best
