"""Comparison policies: hand-crafted frontal approach, sequential single-target
wrapper around a learned one-target network, and mean pooling in place of
attention pooling.

Every agent exposes ``reset()`` and ``act(state) -> action array`` where
``state`` is the environment's :class:`~activecls.env.EpisodeState`.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import policy as pol
from .env import action_bounds, build_observation
from .world import WorldConfig, wrap_angle

STANDOFF = 2.0


@dataclass
class SequentialPlan:
    """Keeps one focus target; moves on to the nearest unclassified one when it is classified."""

    focus: int = None

    def reset(self):
        self.focus = None

    def update(self, state):
        flags = np.asarray(state.classified, dtype=bool)
        if self.focus is not None and self.focus < flags.shape[0] and not flags[self.focus]:
            return self.focus
        open_ids = np.flatnonzero(~flags)
        if open_ids.size == 0:
            self.focus = None
            return None
        d = np.hypot(*(state.targets.positions[open_ids] - state.drone.position[None, :2]).T)
        # argmin returns the first minimum, so ties go to the lowest id
        self.focus = int(open_ids[int(np.argmin(d))])
        return self.focus


def frontal_pose(target_position, facing, standoff=STANDOFF):
    """Viewpoint ``standoff`` meters in front of a target, looking back at it."""
    p = np.asarray(target_position, dtype=np.float64)
    desired = p + standoff * np.array([math.cos(facing), math.sin(facing)])
    return desired, wrap_angle(facing + math.pi)


def viewing_pose(target_position, facing, world=WorldConfig(), standoff=STANDOFF):
    """Frontal pose, rotated around the target by the smallest angle that keeps it in the arena."""
    p = np.asarray(target_position, dtype=np.float64)
    for k in range(37):
        for delta in ((0.0,) if k == 0 else (k * math.radians(5.0), -k * math.radians(5.0))):
            xy, yaw = frontal_pose(p, facing + delta, standoff)
            if 0.0 <= xy[0] <= world.arena_width and 0.0 <= xy[1] <= world.arena_height:
                return xy, yaw
    xy, yaw = frontal_pose(p, facing, standoff)
    return np.clip(xy, 0.0, [world.arena_width, world.arena_height]), yaw


def step_toward(drone, desired_xy, desired_yaw, world=WorldConfig()):
    """Clamped drone-frame action moving toward a world-frame pose."""
    d = np.asarray(desired_xy, dtype=np.float64) - drone.position[:2]
    s, c = math.sin(drone.yaw), math.cos(drone.yaw)
    a = np.array([d[0] * s - d[1] * c, d[0] * c + d[1] * s, wrap_angle(desired_yaw - drone.yaw)])
    b = action_bounds(world)
    return np.clip(a, -b, b)


def handcrafted_action(state, plan=None, world=WorldConfig()):
    plan = plan if plan is not None else SequentialPlan()
    j = plan.update(state)
    if j is None:
        return np.zeros(3)
    # targets move before the next measurement, so aim at where this one will be
    ahead = state.targets.positions[j] + world.tau_h * state.targets.velocities[j]
    desired, yaw = viewing_pose(ahead, state.targets.facing[j], world)
    return step_toward(state.drone, desired, yaw, world)


def deepsets_forward(obs, params):
    """Same trunk and heads as the attention policy, with mean pooling."""
    return pol.forward(params, obs, pooling="mean")


class HandcraftedAgent:
    name = "handcrafted"

    def __init__(self, world=WorldConfig()):
        self.world = world
        self.plan = SequentialPlan()

    def reset(self):
        self.plan.reset()

    def act(self, state):
        return handcrafted_action(state, self.plan, self.world)


class LearnedAgent:
    """Runs a policy network on the full observation set.

    Evaluation uses the squashed Gaussian mean unless ``stochastic`` is set.
    """

    def __init__(self, params, pooling="attention", world=WorldConfig(), stochastic=False,
                 rng=None, name=None):
        self.params = params
        self.pooling = pooling
        self.world = world
        self.bounds = action_bounds(world)
        self.stochastic = stochastic
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.name = name or ("deepsets" if pooling == "mean" else "attention")

    def reset(self):
        pass

    def _act_on(self, feats):
        mu, ls, _ = pol.forward(self.params, feats, self.pooling)
        if self.stochastic:
            return pol.sample_action(mu, ls, self.rng, self.bounds)[0]
        return pol.deterministic_action(mu, self.bounds)

    def act(self, state):
        return self._act_on(build_observation(state).features())


class SingleTargetAgent(LearnedAgent):
    """Feeds only the focus target to a network trained on one target."""

    def __init__(self, params, world=WorldConfig(), stochastic=False, rng=None):
        super().__init__(params, "attention", world, stochastic, rng, name="single-target")
        self.plan = SequentialPlan()

    def reset(self):
        self.plan.reset()

    def act(self, state):
        j = self.plan.update(state)
        if j is None:
            return np.zeros(3)
        feats = build_observation(state).features()
        return self._act_on(feats[j:j + 1])


def single_target_policy(state, params, plan, world=WorldConfig()):
    agent = SingleTargetAgent(params, world)
    agent.plan = plan
    return agent.act(state)
