import math

import numpy as np
import pytest

from activecls.world import (
    DroneState,
    SocialForcesConfig,
    TargetSet,
    TargetState,
    WorldConfig,
    drone_dynamics_f,
    social_acceleration,
    step_drone_firstorder,
    step_targets_cv,
    step_targets_social,
    wrap_angle,
)

CFG = WorldConfig()


def _ts(positions, velocities, static=None):
    positions = np.asarray(positions, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    n = len(positions)
    static = np.zeros(n, dtype=bool) if static is None else np.asarray(static)
    facing = np.arctan2(velocities[:, 1], velocities[:, 0])
    return TargetSet(positions, velocities, facing, np.zeros(n, dtype=int), static)


def test_config_validation():
    with pytest.raises(ValueError):
        WorldConfig(tau_h=0.05, tau_l=0.25)
    with pytest.raises(ValueError):
        WorldConfig(tau_h=0.25, tau_l=0.07)
    with pytest.raises(ValueError):
        WorldConfig(target_radius=0.0)
    assert CFG.substeps == 5


def test_free_motion():
    out = step_targets_cv(_ts([[10, 10]], [[1, 0.5]]), CFG, 0.25)
    np.testing.assert_allclose(out.positions[0], [10.25, 10.125])


def test_head_on_exchange():
    out = step_targets_cv(_ts([[10, 10], [11.3, 10]], [[1, 0], [-1, 0]]), CFG, 0.25)
    np.testing.assert_allclose(out.velocities, [[-1, 0], [1, 0]], atol=1e-12)


def test_wall_reflection():
    out = step_targets_cv(_ts([[1, 25]], [[-1, 0]]), CFG, 0.5)
    np.testing.assert_allclose(out.velocities[0], [1, 0])
    assert out.positions[0, 0] >= CFG.target_radius


def test_static_targets_never_move(rng):
    ts = _ts(rng.uniform(5, 45, (6, 2)), rng.normal(0, 1, (6, 2)), [1, 0, 1, 0, 1, 0])
    ts.velocities[ts.static.astype(bool)] = 0
    before = ts.positions[ts.static.astype(bool)].copy()
    goals = rng.uniform(5, 45, (6, 2))
    for _ in range(50):
        ts = step_targets_cv(ts, CFG, 0.25)
        ts, goals = step_targets_social(ts, goals, SocialForcesConfig(), CFG, 0.25, rng)
    np.testing.assert_array_equal(ts.positions[ts.static.astype(bool)], before)


def test_facing_follows_velocity_and_freezes_when_still():
    ts = _ts([[10, 10], [30, 30]], [[0, 1], [0, 0]], [0, 1])
    ts.facing[1] = 0.7
    out = step_targets_cv(ts, CFG, 0.25)
    assert out.facing[0] == pytest.approx(math.pi / 2)
    assert out.facing[1] == pytest.approx(0.7)


def test_targetset_roundtrip():
    states = [TargetState(np.array([1.0, 2.0]), np.array([0.5, 0.0]), 0.0, 1),
              TargetState(np.array([5.0, 5.0]), np.zeros(2), 1.0, 0, True)]
    ts = TargetSet.from_states(states)
    assert len(ts) == 2
    assert ts[1].is_static and ts[1].class_id == 0
    np.testing.assert_array_equal(ts.take([1, 0]).positions, ts.positions[[1, 0]])


def test_social_single_target_heads_to_goal():
    # on the arena's horizontal midline the wall forces cancel in y
    ts = _ts([[15, 25]], [[0, 0]])
    goals = np.array([[35.0, 25.0]])
    out, _ = step_targets_social(ts, goals, SocialForcesConfig(), CFG, 0.25)
    assert out.velocities[0, 0] > 0 and abs(out.velocities[0, 1]) < 1e-9


def test_social_pure_repulsion_separates():
    ts = _ts([[25, 25], [26.5, 25]], [[0, 0], [0, 0]])
    sf = SocialForcesConfig(goal_attraction_gain=0.0)
    out, _ = step_targets_social(ts, ts.positions.copy(), sf, CFG, 0.25)
    d0 = np.linalg.norm(ts.positions[0] - ts.positions[1])
    d1 = np.linalg.norm(out.positions[0] - out.positions[1])
    assert d1 > d0


def test_social_equilibrium_at_goal():
    p = np.array([[25.0, 25.0]])
    acc = social_acceleration(p, np.zeros((1, 2)), p.copy(), np.zeros(1, dtype=bool),
                              SocialForcesConfig(), CFG)
    assert np.linalg.norm(acc) < 1e-6


def test_social_goal_resampled_on_arrival(rng):
    ts = _ts([[25, 25]], [[0, 0]])
    goals = np.array([[25.1, 25.0]])
    _, g = step_targets_social(ts, goals, SocialForcesConfig(), CFG, 0.25, rng)
    assert not np.allclose(g, goals)


def test_firstorder_saturation_and_identity():
    d = DroneState(np.array([10.0, 10.0, 2.0]), 0.0)
    out = step_drone_firstorder(d, np.array([5.0, 0, 0]), 0.0, CFG, 0.25)
    np.testing.assert_allclose(out.position - d.position, [0.5, 0, 0])
    same = step_drone_firstorder(d, np.zeros(3), 0.0, CFG, 0.25)
    np.testing.assert_array_equal(same.position, d.position)
    assert same.yaw == d.yaw


def test_firstorder_yaw_wraps():
    d = DroneState(np.array([10.0, 10.0, 2.0]), math.pi - 0.1)
    # 1 rad/s stays under the yaw-rate cap; over 0.3 s it turns 0.3 rad
    out = step_drone_firstorder(d, np.zeros(3), 1.0, CFG, 0.3)
    assert out.yaw == pytest.approx(-math.pi + 0.2)


def test_firstorder_clamps_to_arena():
    d = DroneState(np.array([49.9, 0.1, 2.0]), 0.0)
    out = step_drone_firstorder(d, np.array([2.0, -2.0, 0]), 0.0, CFG, 0.25)
    assert out.position[0] == 50.0 and out.position[1] == 0.0


def test_double_integrator_two_steps():
    x = DroneState(np.zeros(3), 0.0)
    for _ in range(2):
        x = drone_dynamics_f(x, np.array([1.0, 0, 0, 0]), 0.05)
    assert x.position[0] == pytest.approx(0.0075, abs=1e-15)


def test_double_integrator_ballistic_and_saturation():
    x = DroneState(np.zeros(3), 0.0, velocity=np.array([1.0, 0.0, 0.0]))
    y = drone_dynamics_f(x, np.zeros(4), 0.05)
    np.testing.assert_array_equal(y.velocity, x.velocity)
    assert y.position[0] == pytest.approx(0.05)
    for _ in range(200):
        y = drone_dynamics_f(y, np.array([4.0, 0, 0, 0]), 0.05)
    assert y.velocity[0] == pytest.approx(CFG.drone_v_max)


def test_double_integrator_rejects_out_of_box():
    with pytest.raises(ValueError):
        drone_dynamics_f(DroneState(np.zeros(3), 0.0), np.array([5.0, 0, 0, 0]), 0.05)


def test_double_integrator_deterministic(rng):
    x = DroneState(rng.normal(size=3), 0.3, velocity=rng.normal(size=3) * 0.5, yaw_rate=0.2)
    u = rng.uniform(-4, 4, 4)
    a, b = drone_dynamics_f(x, u, 0.05), drone_dynamics_f(x, u, 0.05)
    assert a.position.tobytes() == b.position.tobytes() and a.yaw == b.yaw


def test_wrap_angle_range(rng):
    a = wrap_angle(rng.uniform(-50, 50, 1000))
    assert np.all(a > -math.pi) and np.all(a <= math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
