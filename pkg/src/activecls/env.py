"""Active-classification POMDP.

One high-level step lasts ``tau_h`` seconds: the drone moves to the
recommended viewpoint (teleport during training, MPC tracking at test time),
targets advance, every target is measured and its belief is conflated with
the measurement.
"""
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import belief as bl
from .sensor import CameraModel, SensorLaw, observe_all
from .world import (
    DroneState,
    SocialForcesConfig,
    TargetSet,
    WorldConfig,
    drone_dynamics_f,
    step_drone_firstorder,
    step_targets_cv,
    step_targets_social,
    wrap_angle,
)

log = logging.getLogger(__name__)

OBS_DIM = 9
POS_SCALE = 10.0
VEL_SCALE = 1.5


@dataclass(frozen=True)
class RewardWeights:
    w_H: float = 1.0
    w_l: float = 5.0
    w_J: float = 100.0
    w_t: float = 0.3
    w_a: float = 0.01

    def __post_init__(self):
        if min(self.w_H, self.w_l, self.w_J, self.w_t, self.w_a) < 0:
            raise ValueError("reward weights must be non-negative")


@dataclass(frozen=True)
class EpisodeConfig:
    timeout: float = 100.0
    b_max: float = 0.95
    num_targets_range: tuple = (1, 12)
    static_fraction_range: tuple = (0.0, 0.5)
    dynamics_mode: str = "cv"
    num_classes: int = 2
    init_measurements: tuple = (0, 2)
    init_p_true_range: tuple = (0.5, 0.8)
    transition: str = "teleport"
    rng_seed: int = None

    def __post_init__(self):
        if self.dynamics_mode not in ("cv", "social"):
            raise ValueError(f"unknown dynamics mode {self.dynamics_mode!r}")
        if self.transition not in ("teleport", "mpc"):
            raise ValueError(f"unknown transition {self.transition!r}")
        lo, hi = self.num_targets_range
        if not 1 <= lo <= hi:
            raise ValueError("num_targets_range must satisfy 1 <= lo <= hi")

    def max_steps(self, world):
        steps = self.timeout / world.tau_h
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("timeout must be a multiple of tau_h")
        return int(round(steps))


@dataclass(frozen=True)
class CurriculumSchedule:
    """Two training phases split at ``boundary_fraction`` of the step budget."""

    total_steps: int = 400_000
    boundary_fraction: float = 0.75
    phase1_targets: tuple = (1, 12)
    phase2_targets: tuple = (1, 6)

    @property
    def boundary(self):
        return int(round(self.total_steps * self.boundary_fraction))


def curriculum_phase(schedule, global_step, base=EpisodeConfig()):
    rng_targets = schedule.phase1_targets if global_step < schedule.boundary else schedule.phase2_targets
    return replace(base, num_targets_range=tuple(rng_targets))


@dataclass
class ViewpointAction:
    """Displacement in the drone frame (x right, y forward) plus a yaw change."""

    delta_position: np.ndarray
    delta_yaw: float

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=np.float64)
        return cls(a[:2].copy(), float(a[2]))

    def as_array(self):
        return np.array([self.delta_position[0], self.delta_position[1], self.delta_yaw])


def action_bounds(world):
    step = world.drone_v_max * world.tau_h
    return np.array([step, step, world.drone_yaw_rate_max * world.tau_h])


def clamp_action(action, world):
    a = action.as_array() if isinstance(action, ViewpointAction) else np.asarray(action, dtype=np.float64)
    b = action_bounds(world)
    return np.clip(a, -b, b)


@dataclass
class TargetObservation:
    rel_position: np.ndarray
    rel_velocity: np.ndarray
    rel_facing: float
    belief_entropy: float
    measurement_entropy: float
    classified: int


@dataclass
class ObservationSet:
    """Per-target observations as parallel arrays (drone frame)."""

    rel_position: np.ndarray
    rel_velocity: np.ndarray
    rel_facing: np.ndarray
    belief_entropy: np.ndarray
    measurement_entropy: np.ndarray
    classified: np.ndarray

    def __len__(self):
        return self.rel_position.shape[0]

    def items(self):
        return [
            TargetObservation(self.rel_position[i].copy(), self.rel_velocity[i].copy(),
                              float(self.rel_facing[i]), float(self.belief_entropy[i]),
                              float(self.measurement_entropy[i]), int(self.classified[i]))
            for i in range(len(self))
        ]

    def features(self):
        """(M, 9) policy input: scaled kinematics, facing as sin/cos, entropies, flag."""
        return np.column_stack([
            self.rel_position / POS_SCALE,
            self.rel_velocity / VEL_SCALE,
            np.sin(self.rel_facing),
            np.cos(self.rel_facing),
            self.belief_entropy,
            self.measurement_entropy,
            self.classified.astype(np.float64),
        ])


@dataclass
class EpisodeState:
    drone: DroneState
    targets: TargetSet
    beliefs: np.ndarray
    classified: np.ndarray
    last_probs: np.ndarray
    last_visible: np.ndarray
    goals: np.ndarray = None
    step_count: int = 0
    done: bool = False
    misclassified: np.ndarray = None

    @property
    def num_targets(self):
        return len(self.targets)


def _to_drone_frame(vec, yaw):
    s, c = math.sin(yaw), math.cos(yaw)
    return np.column_stack([vec[:, 0] * s - vec[:, 1] * c, vec[:, 0] * c + vec[:, 1] * s])


def _to_world_frame(vec2, yaw):
    s, c = math.sin(yaw), math.cos(yaw)
    # right = (s, -c), forward = (c, s)
    return np.array([vec2[0] * s + vec2[1] * c, -vec2[0] * c + vec2[1] * s])


def build_observation(state, C=None):
    """Drone-frame observation of every target, classified ones included."""
    d = state.drone
    C = state.beliefs.shape[1] if C is None else C
    rel = state.targets.positions - d.position[None, :2]
    rel_v = state.targets.velocities - d.velocity[None, :2]
    return ObservationSet(
        rel_position=_to_drone_frame(rel, d.yaw),
        rel_velocity=_to_drone_frame(rel_v, d.yaw),
        rel_facing=wrap_angle(state.targets.facing - d.yaw),
        belief_entropy=bl.normalized_entropy(state.beliefs, C),
        measurement_entropy=bl.normalized_entropy(state.last_probs, C),
        classified=state.classified.astype(np.int64),
    )


def reward_terms(prev, action, nxt, w=RewardWeights(), C=None):
    """The five reward components as a dict (time and action terms are negative)."""
    C = prev.beliefs.shape[1] if C is None else C
    a = np.asarray(action.as_array() if isinstance(action, ViewpointAction) else action, dtype=np.float64)
    h_prev = bl.normalized_entropy(prev.beliefs, C)
    h_next = bl.normalized_entropy(nxt.beliefs, C)
    flags_prev = np.asarray(prev.classified, dtype=np.float64)
    flags_next = np.asarray(nxt.classified, dtype=np.float64)
    m = flags_next.shape[0]
    return {
        "entropy": w.w_H * float(np.sum(h_prev - h_next)),
        "classified": w.w_l * float(np.sum(flags_next - flags_prev)),
        "complete": w.w_J if m > 0 and flags_next.sum() == m else 0.0,
        "time": -w.w_t,
        "action": -w.w_a * (math.hypot(a[0], a[1]) + abs(a[2])),
    }


def compute_reward(prev, action, nxt, w=RewardWeights(), C=None):
    return sum(reward_terms(prev, action, nxt, w, C).values())


@dataclass
class EnvSpec:
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    camera: CameraModel = field(default_factory=CameraModel)
    law: SensorLaw = field(default_factory=SensorLaw)
    rewards: RewardWeights = field(default_factory=RewardWeights)
    social: SocialForcesConfig = field(default_factory=SocialForcesConfig)
    mpc: object = None


class ActiveClassificationEnv:
    """Single-threaded environment instance that owns its random stream."""

    def __init__(self, spec=None, seed=None, kernels=None):
        self.spec = spec if spec is not None else EnvSpec()
        self.rng = np.random.default_rng(seed if seed is not None else self.spec.episode.rng_seed)
        self.kernels = kernels
        self.state = None
        self.controller = None
        self.tracking_log = []

    @property
    def C(self):
        return self.spec.episode.num_classes

    def reset(self, seed=None, episode=None):
        """Start an episode; ``seed`` re-seeds the environment stream first."""
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        if episode is not None:
            self.spec = replace(self.spec, episode=episode)
        self.state = sample_initial_state(self.spec, self.rng)
        self.max_steps = self.spec.episode.max_steps(self.spec.world)
        self.controller = None
        self.tracking_log = []
        return build_observation(self.state, self.C)

    def step(self, action):
        spec = self.spec
        st = self.state
        if st is None or st.done:
            raise RuntimeError("call reset() before step()")
        world = spec.world
        a = clamp_action(action, world)
        prev_beliefs = st.beliefs
        prev_flags = st.classified

        if spec.episode.transition == "teleport":
            disp = _to_world_frame(a[:2], st.drone.yaw)
            v_cmd = np.array([disp[0], disp[1], 0.0]) / world.tau_h
            st.drone = step_drone_firstorder(st.drone, v_cmd, a[2] / world.tau_h, world, world.tau_h)
        else:
            self._track_viewpoint(a)

        if spec.episode.dynamics_mode == "cv":
            st.targets = step_targets_cv(st.targets, world, world.tau_h)
        else:
            st.targets, st.goals = step_targets_social(st.targets, st.goals, spec.social, world,
                                                       world.tau_h, self.rng)

        obs = observe_all(st.drone, st.targets, spec.camera, world, self.C, spec.law, self.kernels)
        st.beliefs = bl.conflate_many(st.beliefs, obs.probs)
        st.last_probs = obs.probs
        st.last_visible = obs.visible
        flags = bl.update_flags(st.beliefs, prev_flags, spec.episode.b_max)
        newly = flags & ~prev_flags
        if newly.any():
            wrong = np.argmax(st.beliefs, axis=1) != st.targets.class_ids
            st.misclassified = st.misclassified | (newly & wrong)
        st.classified = flags
        st.step_count += 1

        prev = _Snapshot(prev_beliefs, prev_flags)
        terms = reward_terms(prev, a, st, spec.rewards, self.C)
        reward = sum(terms.values())
        st.done = bool(flags.all()) or st.step_count >= self.max_steps
        info = {
            "visible": obs.visible,
            "probs": obs.probs,
            "area": obs.area,
            "skew": obs.skew,
            "p_true": obs.p_true,
            "terms": terms,
            "action": a,
            "timeout": st.step_count >= self.max_steps and not flags.all(),
        }
        return build_observation(st, self.C), reward, st.done, info

    def _track_viewpoint(self, a):
        from .mpc import MPCConfig, MPCController, viewpoint_target

        spec = self.spec
        st = self.state
        world = spec.world
        if self.controller is None:
            self.controller = MPCController(spec.mpc if spec.mpc is not None else MPCConfig(), world)
        goal = viewpoint_target(st.drone, a)
        for _ in range(world.substeps):
            u = self.controller.track(st.drone, goal)
            d = drone_dynamics_f(st.drone, u, world.tau_l, world, self.controller.cfg.u_max)
            d.position[0] = min(max(d.position[0], 0.0), world.arena_width)
            d.position[1] = min(max(d.position[1], 0.0), world.arena_height)
            st.drone = d
        err = goal[:3] - st.drone.position
        sol = self.controller.last
        self.tracking_log.append((float(np.hypot(err[0], err[1])),
                                  abs(wrap_angle(goal[3] - st.drone.yaw)),
                                  float(sol.cost), int(sol.iterations)))


@dataclass
class _Snapshot:
    beliefs: np.ndarray
    classified: np.ndarray


def _place_targets(m, world, rng, margin=0.1, tries=200):
    r = world.target_radius
    lo = np.array([r, r])
    hi = np.array([world.arena_width - r, world.arena_height - r])
    placed = []
    min_d2 = (2 * r + margin) ** 2
    for _ in range(m):
        for _ in range(tries):
            p = rng.uniform(lo, hi)
            if all((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 >= min_d2 for q in placed):
                placed.append(p)
                break
        else:
            log.warning("could only place %d of %d targets", len(placed), m)
            break
    return np.array(placed).reshape(-1, 2)


def sample_initial_state(spec, rng):
    """Domain-randomized initial conditions; deterministic given ``rng``."""
    ep, world = spec.episode, spec.world
    C = ep.num_classes
    m = int(rng.integers(ep.num_targets_range[0], ep.num_targets_range[1] + 1))
    positions = _place_targets(m, world, rng)
    m = positions.shape[0]
    static_frac = rng.uniform(*ep.static_fraction_range)
    static = rng.random(m) < static_frac
    mag = np.clip(rng.normal(world.target_speed_mean, world.target_speed_std, (m, 2)),
                  0.0, world.target_speed_cap)
    sign = rng.choice([-1.0, 1.0], size=(m, 2))
    velocities = mag * sign
    velocities[static] = 0.0
    facing = np.arctan2(velocities[:, 1], velocities[:, 0])
    random_facing = rng.uniform(-np.pi, np.pi, m)
    facing[static] = random_facing[static]
    classes = rng.integers(0, C, m)
    targets = TargetSet(positions, velocities, wrap_angle(facing), classes, static)

    beliefs = np.full((m, C), 1.0 / C)
    n_meas = rng.integers(ep.init_measurements[0], ep.init_measurements[1] + 1, m)
    for i in range(m):
        for _ in range(n_meas[i]):
            p_true = rng.uniform(*ep.init_p_true_range)
            p = np.full(C, (1.0 - p_true) / (C - 1))
            p[classes[i]] = p_true
            beliefs[i] = bl.conflate(beliefs[i], p)

    pos = np.array([rng.uniform(0, world.arena_width), rng.uniform(0, world.arena_height),
                    world.drone_altitude])
    drone = DroneState(position=pos, yaw=wrap_angle(rng.uniform(-np.pi, np.pi)))
    r = world.target_radius
    goals = rng.uniform([r, r], [world.arena_width - r, world.arena_height - r], (m, 2))
    return EpisodeState(
        drone=drone,
        targets=targets,
        beliefs=beliefs,
        classified=bl.update_flags(beliefs, np.zeros(m, dtype=bool), ep.b_max),
        last_probs=np.full((m, C), 1.0 / C),
        last_visible=np.zeros(m, dtype=bool),
        goals=goals,
        misclassified=np.zeros(m, dtype=bool),
    )
