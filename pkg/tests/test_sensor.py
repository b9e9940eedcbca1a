import itertools
import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from activecls.sensor import (
    CameraModel,
    SensorLaw,
    TrapezoidProjection,
    class_vectors,
    is_visible,
    observe_all,
    observe_class,
    project_front_face,
    true_class_probability,
)
from activecls.world import DroneState, TargetSet, TargetState, WorldConfig

CAM = CameraModel()
LEVEL = CameraModel(pitch=0.0)
DRONE = DroneState(np.array([0.0, 0.0, 2.0]), 0.0)


def target(x, y=0.0, facing=math.pi, cls=0):
    return TargetState(np.array([x, y]), np.zeros(2), facing, cls, True)


def shoelace(p):
    x, y = p[:, 0], p[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def sampled_hull_area(cam, drone, tgt, r=0.6, h=1.8, n=10_000, seed=0):
    """Independent projector: scatter points on the camera-facing part of the
    front half-cylinder, project them and take the convex hull."""
    rng = np.random.default_rng(seed)
    th = tgt.facing + rng.uniform(-math.pi / 2, math.pi / 2, n)
    z = rng.uniform(0, h, n)
    rim = tgt.facing + np.linspace(-math.pi / 2, math.pi / 2, 200).repeat(2)
    th = np.concatenate([th, rim])
    z = np.concatenate([z, np.tile([0.0, h], 200)])
    pts = np.column_stack([tgt.position[0] + r * np.cos(th), tgt.position[1] + r * np.sin(th), z])
    rel = pts - drone.position
    normal = np.column_stack([np.cos(th), np.sin(th)])
    rel = rel[(normal * -rel[:, :2]).sum(1) > 0]
    cp, sp = math.cos(cam.pitch), math.sin(cam.pitch)
    fwd = np.array([math.cos(drone.yaw) * cp, math.sin(drone.yaw) * cp, -sp])
    right = np.array([math.sin(drone.yaw), -math.cos(drone.yaw), 0.0])
    down = np.cross(fwd, right)
    depth = rel @ fwd
    uv = cam.focal_px * np.column_stack([rel @ right, rel @ down]) / depth[:, None]
    return ConvexHull(uv).volume


def test_camera_fov():
    assert CAM.fov_horizontal == pytest.approx(2 * math.atan(320 / 400))
    assert CAM.fov_vertical == pytest.approx(2 * math.atan(240 / 400))
    with pytest.raises(ValueError):
        CameraModel(focal_px=0)


def test_lone_target_ahead_visible():
    assert is_visible(DRONE, target(5.0), [])


def test_occluder_on_midpoint_blocks():
    assert not is_visible(DRONE, target(6.0), [target(3.0)])


def test_target_behind_not_visible():
    assert not is_visible(DRONE, target(-5.0), [])


def test_short_occluder_below_sight_line_does_not_block():
    # a drone high above sees over a 1.8 m cylinder close to the target
    high = DroneState(np.array([0.0, 0.0, 20.0]), 0.0)
    cam = CameraModel(pitch=math.radians(60))
    assert is_visible(high, target(12.0), [target(10.5)], cam)
    assert not is_visible(DRONE, target(12.0), [target(10.5)], cam)


def test_visibility_independent_of_occluder_order(rng):
    for _ in range(50):
        tgt = target(rng.uniform(3, 15), rng.uniform(-4, 4))
        others = [target(rng.uniform(1, 15), rng.uniform(-4, 4)) for _ in range(4)]
        results = {is_visible(DRONE, tgt, list(p)) for p in itertools.permutations(others)}
        assert len(results) == 1


def test_frontal_area_matches_point_sampling_oracle():
    tgt = target(5.0)
    tp = project_front_face(DRONE, tgt, CAM)
    assert tp.skew == pytest.approx(0.0, abs=1e-12)
    oracle = sampled_hull_area(CAM, DRONE, tgt)
    assert abs(tp.area / oracle - 1.0) < 0.05


@pytest.mark.parametrize("d", [3.0, 8.0, 12.0])
def test_area_oracle_other_distances(d):
    tgt = target(d)
    oracle = sampled_hull_area(CAM, DRONE, tgt)
    assert abs(project_front_face(DRONE, tgt, CAM).area / oracle - 1.0) < 0.05


def test_back_face_has_zero_area():
    tp = project_front_face(DRONE, target(5.0, facing=0.0), CAM)
    assert tp.area == 0.0 and tp.skew == 1.0


def test_corner_quad_scales_inverse_square():
    a5 = shoelace(project_front_face(DRONE, target(5.0), LEVEL).corners)
    a10 = shoelace(project_front_face(DRONE, target(10.0), LEVEL).corners)
    assert a5 / a10 == pytest.approx(4.0, rel=0.02)


@pytest.mark.parametrize("d", [20.0, 40.0])
def test_outline_area_scales_inverse_square_when_small(d):
    a = project_front_face(DRONE, target(d), LEVEL).area
    a2 = project_front_face(DRONE, target(2 * d), LEVEL).area
    assert a / a2 == pytest.approx(4.0, rel=0.02)


def test_oblique_view_skew():
    # facing rotated 60 degrees away from the target->drone direction
    tp = project_front_face(DRONE, target(5.0, facing=math.pi - math.radians(60)), CAM)
    assert tp.skew == pytest.approx(1 - math.cos(math.radians(60)), abs=1e-12)
    assert 0 < tp.area < project_front_face(DRONE, target(5.0), CAM).area


def test_too_close_does_not_fit():
    assert not project_front_face(DRONE, target(1.2), CAM).fits_in_image
    assert project_front_face(DRONE, target(2.0), CAM).fits_in_image


def test_law_examples():
    law = SensorLaw()
    assert true_class_probability(6000.0, 0.0, True, law) == pytest.approx(0.95)
    assert true_class_probability(60000.0, 0.0, True, law) == pytest.approx(0.95)
    assert true_class_probability(3000.0, 1.0, True, law) < 0.5
    assert true_class_probability(6000.0, 0.0, False, law) == pytest.approx(0.19)


def test_observe_class_floors_to_uniform():
    tp = TrapezoidProjection(np.zeros((4, 2)), 9000.0, 1.0, True)
    np.testing.assert_array_equal(observe_class(tp, 0, 2), [0.5, 0.5])
    bad = TrapezoidProjection(np.zeros((4, 2)), 9000.0, 0.0, False)
    np.testing.assert_array_equal(observe_class(bad, 1, 2), [0.5, 0.5])
    good = TrapezoidProjection(np.zeros((4, 2)), 9000.0, 0.0, True)
    np.testing.assert_allclose(observe_class(good, 2, 4), [0.05 / 3, 0.05 / 3, 0.95, 0.05 / 3])
    with pytest.raises(ValueError):
        observe_class(good, 0, 1)


def test_law_monotone_on_grid():
    areas = np.linspace(0, 12000, 61)
    skews = np.linspace(0, 1, 41)
    grid = true_class_probability(areas[:, None], skews[None, :], True)
    assert np.all(np.diff(grid, axis=0) >= -1e-15)
    assert np.all(np.diff(grid, axis=1) <= 1e-15)


def test_class_vectors_normalized(rng):
    for C in (2, 3, 5):
        p = class_vectors(rng.uniform(0, 1, 100), rng.integers(0, C, 100), C)
        np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-12)
        assert p.min() >= 0 and p.max() <= 1


def _set(states):
    return TargetSet.from_states(states)


def test_observe_all_empty():
    obs = observe_all(DRONE, _set([]), CAM, WorldConfig(), 2)
    assert obs.probs.shape == (0, 2)


def test_observe_all_behind_is_uniform():
    obs = observe_all(DRONE, _set([target(-4.0), target(-8.0, 3.0)]), CAM, WorldConfig(), 3)
    np.testing.assert_array_equal(obs.probs, np.full((2, 3), 1 / 3))


def test_observe_all_one_frontal_among_occluded():
    ts = _set([target(4.0), target(8.0, 0.1), target(12.0, -0.1)])
    obs = observe_all(DRONE, ts, CAM, WorldConfig(), 2)
    informative = ~np.all(obs.probs == 0.5, axis=1)
    assert informative.tolist() == [True, False, False]
