"""Receding-horizon viewpoint tracking on a four-axis double integrator.

The decision variable is the input sequence u_0..u_{N-1}; the terminal state
is affine in it, so the cost gradient is analytic. The stage cost is the
smoothed input norm, the terminal cost the distance to the viewpoint (at
rest) normalized by the initial distance.
"""
import math
from dataclasses import dataclass

import numpy as np

from .kernels import backend
from .world import WorldConfig, wrap_angle


@dataclass(frozen=True)
class MPCConfig:
    horizon: int = 10
    w_u: float = 0.005
    w_g: float = 10.0
    u_max: tuple = (4.0, 4.0, 4.0, 4.0)
    iterations: int = 100
    step_size: float = 10.0
    tol: float = 1e-6
    eps: float = 1e-6

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.w_u < 0 or self.w_g < 0:
            raise ValueError("weights must be non-negative")
        if len(self.u_max) != 4 or min(self.u_max) <= 0:
            raise ValueError("u_max must hold four positive limits")


def viewpoint_target(drone, action):
    """World-frame (x, y, z, yaw) goal for a drone-frame viewpoint action."""
    a = np.asarray(action, dtype=np.float64)
    s, c = math.sin(drone.yaw), math.cos(drone.yaw)
    dx = a[0] * s + a[1] * c
    dy = -a[0] * c + a[1] * s
    return np.array([drone.position[0] + dx, drone.position[1] + dy, drone.position[2],
                     wrap_angle(drone.yaw + a[2])])


def state_vectors(x):
    p = np.array([x.position[0], x.position[1], x.position[2], x.yaw], dtype=np.float64)
    v = np.array([x.velocity[0], x.velocity[1], x.velocity[2], x.yaw_rate], dtype=np.float64)
    return p, v


def initial_distance(x0, x_at):
    p, v = state_vectors(x0)
    e = p - np.asarray(x_at, dtype=np.float64)
    e[3] = wrap_angle(e[3])
    return math.sqrt(float(e @ e + v @ v))


@dataclass
class MPCSolution:
    controls: np.ndarray
    costs: list
    iterations: int

    @property
    def cost(self):
        return self.costs[-1]


def solve(x0, x_at, cfg=MPCConfig(), warm_start=None, dt=None, kernels=None):
    """Minimize stage plus terminal cost over the horizon; returns :class:`MPCSolution`."""
    k = kernels if kernels is not None else backend
    dt = WorldConfig().tau_l if dt is None else dt
    p, v = state_vectors(x0)
    U0 = np.zeros((cfg.horizon, 4)) if warm_start is None else np.asarray(warm_start, dtype=np.float64)
    U, costs, its = k.mpc_solve(p, v, np.asarray(x_at, dtype=np.float64), U0, dt, cfg.w_u,
                                cfg.w_g, np.asarray(cfg.u_max, dtype=np.float64), cfg.iterations,
                                cfg.step_size, cfg.tol, cfg.eps)
    return MPCSolution(np.asarray(U), list(costs), int(its))


def cost(x0, x_at, U, cfg=MPCConfig(), dt=None, kernels=None):
    k = kernels if kernels is not None else backend
    dt = WorldConfig().tau_l if dt is None else dt
    p, v = state_vectors(x0)
    n0 = initial_distance(x0, x_at)
    return k.mpc_cost(p, v, np.asarray(x_at, dtype=np.float64), np.asarray(U, dtype=np.float64),
                      dt, cfg.w_u, cfg.w_g, n0, cfg.eps)


class MPCController:
    """Applies the first input of each solve and warm-starts the next one."""

    def __init__(self, cfg=MPCConfig(), world=None, kernels=None):
        self.cfg = cfg
        self.world = world if world is not None else WorldConfig()
        self.kernels = kernels
        self._prev = None
        self.last = None

    def reset(self):
        self._prev = None

    def track(self, state, x_at):
        warm = None
        if self._prev is not None:
            warm = np.vstack([self._prev[1:], self._prev[-1:]])
        sol = solve(state, x_at, self.cfg, warm, self.world.tau_l, self.kernels)
        self._prev = sol.controls
        self.last = sol
        return sol.controls[0].copy()
