"""Target and drone kinematics.

Targets are upright cylinders moving in a rectangular arena, either with
constant velocity and elastic rebounds or with social-force pedestrian
dynamics. The drone flies above them: first-order velocity control during
training, a double integrator at test time.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .kernels import backend

SPEED_EPS = 1e-9


def wrap_angle(a):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    r = np.fmod(np.asarray(a, dtype=np.float64) + np.pi, 2.0 * np.pi)
    r = np.where(r <= 0.0, r + 2.0 * np.pi, r) - np.pi
    return float(r) if r.ndim == 0 else r


@dataclass(frozen=True)
class WorldConfig:
    arena_width: float = 50.0
    arena_height: float = 50.0
    tau_h: float = 0.25
    tau_l: float = 0.05
    target_radius: float = 0.6
    target_height: float = 1.8
    target_speed_mean: float = 1.0
    target_speed_std: float = 0.25
    target_speed_cap: float = 1.5
    drone_v_max: float = 2.0
    drone_yaw_rate_max: float = math.radians(60.0)
    drone_altitude: float = 2.0
    unlock_z: bool = False

    def __post_init__(self):
        if not self.tau_h > self.tau_l > 0:
            raise ValueError("need tau_h > tau_l > 0")
        ratio = self.tau_h / self.tau_l
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("tau_h must be an integer multiple of tau_l")
        for name in ("arena_width", "arena_height", "target_radius", "target_height",
                     "drone_altitude", "drone_v_max", "drone_yaw_rate_max", "target_speed_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def substeps(self):
        return int(round(self.tau_h / self.tau_l))


@dataclass(frozen=True)
class SocialForcesConfig:
    goal_attraction_gain: float = 1.0
    target_repulsion_strength: float = 2.0
    repulsion_range: float = 2.0
    wall_repulsion_strength: float = 2.0
    desired_speed: float = 1.0
    goal_resample_radius: float = 0.5

    def __post_init__(self):
        for name in ("goal_attraction_gain", "target_repulsion_strength", "repulsion_range",
                     "wall_repulsion_strength", "desired_speed", "goal_resample_radius"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class TargetState:
    position: np.ndarray
    velocity: np.ndarray
    facing: float
    class_id: int
    is_static: bool = False


class TargetSet:
    """Struct-of-arrays storage for M targets.

    Behaves as a sequence of :class:`TargetState` (indexing returns copies),
    while the world and sensor kernels operate on the underlying arrays.
    """

    def __init__(self, positions, velocities, facing, class_ids, static):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64).reshape(-1, 2)
        self.velocities = np.ascontiguousarray(velocities, dtype=np.float64).reshape(-1, 2)
        self.facing = np.ascontiguousarray(facing, dtype=np.float64).reshape(-1)
        self.class_ids = np.asarray(class_ids, dtype=np.int64).reshape(-1)
        self.static = np.ascontiguousarray(static, dtype=np.uint8).reshape(-1)

    @classmethod
    def from_states(cls, states):
        states = list(states)
        if not states:
            return cls(np.zeros((0, 2)), np.zeros((0, 2)), [], [], [])
        return cls(
            [s.position for s in states],
            [s.velocity for s in states],
            [s.facing for s in states],
            [s.class_id for s in states],
            [s.is_static for s in states],
        )

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, i):
        return TargetState(
            position=self.positions[i].copy(),
            velocity=self.velocities[i].copy(),
            facing=float(self.facing[i]),
            class_id=int(self.class_ids[i]),
            is_static=bool(self.static[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def copy(self):
        return TargetSet(self.positions.copy(), self.velocities.copy(), self.facing.copy(),
                         self.class_ids.copy(), self.static.copy())

    def take(self, index):
        index = np.asarray(index)
        return TargetSet(self.positions[index], self.velocities[index], self.facing[index],
                         self.class_ids[index], self.static[index])


def as_target_set(targets):
    if isinstance(targets, TargetSet):
        return targets
    return TargetSet.from_states(targets)


def _update_facing(ts):
    speed = np.hypot(ts.velocities[:, 0], ts.velocities[:, 1])
    moving = (speed > SPEED_EPS) & (ts.static == 0)
    ts.facing[moving] = np.arctan2(ts.velocities[moving, 1], ts.velocities[moving, 0])


def step_targets_cv(targets, cfg, dt):
    """Constant-velocity step with elastic target-target and wall rebounds."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    ts = as_target_set(targets).copy()
    backend.advance_cv(ts.positions, ts.velocities, ts.static, dt, cfg.target_radius,
                       cfg.arena_width, cfg.arena_height)
    _update_facing(ts)
    return ts


def social_acceleration(positions, velocities, goals, static, sf, cfg):
    """Goal attraction plus pairwise and wall repulsion, per target (M, 2)."""
    pos = np.asarray(positions, dtype=np.float64)
    vel = np.asarray(velocities, dtype=np.float64)
    to_goal = np.asarray(goals, dtype=np.float64) - pos
    dist = np.hypot(to_goal[:, 0], to_goal[:, 1])
    direction = np.divide(to_goal, dist[:, None], out=np.zeros_like(to_goal),
                          where=dist[:, None] > 1e-9)
    acc = sf.goal_attraction_gain * (sf.desired_speed * direction - vel)

    diff = pos[:, None, :] - pos[None, :, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    np.fill_diagonal(d, np.inf)
    gap = np.maximum(d - 2.0 * cfg.target_radius, 0.0)
    mag = sf.target_repulsion_strength * np.exp(-gap / sf.repulsion_range)
    mag = np.where(np.isfinite(d), mag, 0.0)
    unit = np.divide(diff, d[..., None], out=np.zeros_like(diff), where=np.isfinite(d)[..., None] & (d[..., None] > 1e-12))
    acc += (mag[..., None] * unit).sum(axis=1)

    r = cfg.target_radius
    walls = (
        (pos[:, 0] - r, np.array([1.0, 0.0])),
        (cfg.arena_width - r - pos[:, 0], np.array([-1.0, 0.0])),
        (pos[:, 1] - r, np.array([0.0, 1.0])),
        (cfg.arena_height - r - pos[:, 1], np.array([0.0, -1.0])),
    )
    for gap_w, normal in walls:
        mag_w = sf.wall_repulsion_strength * np.exp(-np.maximum(gap_w, 0.0) / sf.repulsion_range)
        acc += mag_w[:, None] * normal[None, :]
    acc[np.asarray(static, dtype=bool)] = 0.0
    return acc


def step_targets_social(targets, goals, sf, cfg, dt, rng=None):
    """Social-forces step. Returns (targets, goals); goals are resampled on arrival."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    ts = as_target_set(targets).copy()
    goals = np.array(goals, dtype=np.float64).reshape(-1, 2)
    acc = social_acceleration(ts.positions, ts.velocities, goals, ts.static, sf, cfg)
    moving = ts.static == 0
    vel = ts.velocities + acc * dt
    speed = np.hypot(vel[:, 0], vel[:, 1])
    scale = np.minimum(1.0, cfg.target_speed_cap / np.maximum(speed, 1e-12))
    vel = vel * scale[:, None]
    ts.velocities[moving] = vel[moving]
    ts.positions[moving] += ts.velocities[moving] * dt
    backend.resolve_contacts(ts.positions, ts.velocities, ts.static, cfg.target_radius,
                             cfg.arena_width, cfg.arena_height)
    _update_facing(ts)
    reached = np.hypot(*(goals - ts.positions).T) < sf.goal_resample_radius
    reached &= moving
    if reached.any():
        rng = rng if rng is not None else np.random.default_rng()
        r = cfg.target_radius
        for i in np.flatnonzero(reached):
            goals[i] = rng.uniform([r, r], [cfg.arena_width - r, cfg.arena_height - r])
    return ts, goals


@dataclass
class DroneState:
    position: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 2.0]))
    yaw: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw_rate: float = 0.0

    def copy(self):
        return replace(self, position=np.array(self.position, dtype=np.float64),
                       velocity=np.array(self.velocity, dtype=np.float64))


def _clamp_to_arena(position, cfg):
    p = np.array(position, dtype=np.float64)
    p[0] = min(max(p[0], 0.0), cfg.arena_width)
    p[1] = min(max(p[1], 0.0), cfg.arena_height)
    return p


def step_drone_firstorder(d, v_cmd, yaw_cmd, cfg, dt):
    """Velocity-commanded drone; commands saturate at the configured limits."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = np.clip(np.asarray(v_cmd, dtype=np.float64), -cfg.drone_v_max, cfg.drone_v_max)
    if not cfg.unlock_z:
        v[2] = 0.0
    w = min(max(float(yaw_cmd), -cfg.drone_yaw_rate_max), cfg.drone_yaw_rate_max)
    pos = _clamp_to_arena(d.position + v * dt, cfg)
    return DroneState(position=pos, yaw=wrap_angle(d.yaw + w * dt), velocity=v, yaw_rate=w)


DEFAULT_INPUT_BOX = (4.0, 4.0, 4.0, 4.0)


def drone_dynamics_f(x, u, dt, cfg=None, u_max=DEFAULT_INPUT_BOX):
    """Double-integrator step x' = f(x, u) on (x, y, z, yaw).

    ``u`` is (ax, ay, az, yaw_acc). Velocities integrate first and are then
    clamped; positions integrate the new velocity. Inputs outside the box
    raise ``ValueError``.
    """
    cfg = cfg if cfg is not None else WorldConfig()
    u = np.asarray(u, dtype=np.float64)
    box = np.asarray(u_max, dtype=np.float64)
    if u.shape != (4,):
        raise ValueError("u must have 4 entries")
    if np.any(np.abs(u) > box * (1 + 1e-12)):
        raise ValueError(f"input {u} outside box {box}")
    vel = np.clip(x.velocity + u[:3] * dt, -cfg.drone_v_max, cfg.drone_v_max)
    if not cfg.unlock_z:
        vel[2] = 0.0
    rate = min(max(x.yaw_rate + u[3] * dt, -cfg.drone_yaw_rate_max), cfg.drone_yaw_rate_max)
    pos = x.position + vel * dt
    return DroneState(position=pos, yaw=wrap_angle(x.yaw + rate * dt), velocity=vel, yaw_rate=rate)
