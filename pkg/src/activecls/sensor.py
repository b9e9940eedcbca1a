"""Synthetic pinhole classifier.

A target is visible when the line from the camera to its center clears every
other cylinder and the center lands in the image. Its front half-cylinder is
projected to a quadrilateral-like outline whose area and viewing skew drive a
class-probability vector: confidence grows linearly with area, decays
exponentially with skew and collapses when the outline leaves the frame.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import _pykernels
from .kernels import backend
from .world import WorldConfig


@dataclass(frozen=True)
class CameraModel:
    focal_px: float = 400.0
    image_width: int = 640
    image_height: int = 480
    pitch: float = math.radians(30.0)  # downward tilt of the optical axis
    arc_samples: int = 9

    def __post_init__(self):
        if self.focal_px <= 0:
            raise ValueError("focal_px must be positive")
        if self.arc_samples < 2:
            raise ValueError("arc_samples must be >= 2")

    @property
    def fov_horizontal(self):
        return 2.0 * math.atan(0.5 * self.image_width / self.focal_px)

    @property
    def fov_vertical(self):
        return 2.0 * math.atan(0.5 * self.image_height / self.focal_px)


@dataclass(frozen=True)
class SensorLaw:
    p_floor: float = 0.5
    p_ceil: float = 0.95
    area_gain: float = 0.45
    area_ref: float = 6000.0
    skew_decay: float = 2.0
    out_of_frame: float = 0.2


@dataclass
class TrapezoidProjection:
    corners: np.ndarray  # (4, 2): top-left silhouette, top-right, bottom-right, bottom-left
    area: float
    skew: float
    fits_in_image: bool
    outline: np.ndarray = None


def camera_position(drone):
    return np.asarray(drone.position, dtype=np.float64)


def is_visible(drone, target, others, cam=CameraModel(), world=WorldConfig()):
    """Unobstructed sight line to the target center and center inside the image."""
    pos = np.vstack([np.asarray(target.position, dtype=np.float64).reshape(1, 2)]
                    + [np.asarray(o.position, dtype=np.float64).reshape(1, 2) for o in others])
    basis = _pykernels.camera_basis(drone.yaw, cam.pitch)
    c = tuple(float(x) for x in camera_position(drone))
    return _pykernels.target_visible(c, basis, pos, 0, world.target_radius, world.target_height,
                                     cam.focal_px, cam.image_width, cam.image_height)


def project_front_face(drone, target, cam=CameraModel(), world=WorldConfig()):
    """Project the visible part of the target's front half-cylinder."""
    n = cam.arc_samples
    outline = np.zeros((2 * n, 2))
    basis = _pykernels.camera_basis(drone.yaw, cam.pitch)
    c = tuple(float(x) for x in camera_position(drone))
    area, skew, fits = _pykernels.front_face(
        c, basis, float(target.position[0]), float(target.position[1]), float(target.facing),
        world.target_radius, world.target_height, cam.focal_px, cam.image_width,
        cam.image_height, n, outline)
    corners = outline[[0, n - 1, n, 2 * n - 1]]
    return TrapezoidProjection(corners=corners, area=area, skew=skew, fits_in_image=bool(fits),
                               outline=outline)


def true_class_probability(area, skew, fits, law=SensorLaw()):
    """Confidence assigned to the true class (before the uniform floor)."""
    area = np.asarray(area, dtype=np.float64)
    base = law.p_floor + law.area_gain * np.minimum(area / law.area_ref, 1.0)
    base = np.clip(base, law.p_floor, law.p_ceil)
    p = base * np.exp(-law.skew_decay * np.asarray(skew, dtype=np.float64))
    return np.where(np.asarray(fits, dtype=bool), p, p * law.out_of_frame)


def class_vectors(p_true, true_class, num_classes):
    """Expand true-class confidences into (M, C) probability rows."""
    p_true = np.atleast_1d(np.asarray(p_true, dtype=np.float64))
    true_class = np.atleast_1d(np.asarray(true_class))
    m = p_true.shape[0]
    uniform = 1.0 / num_classes
    informative = p_true >= uniform
    rest = np.where(informative, (1.0 - p_true) / (num_classes - 1), uniform)
    probs = np.repeat(rest[:, None], num_classes, axis=1)
    probs[np.arange(m), true_class] = np.where(informative, p_true, uniform)
    return probs


def observe_class(tp, true_class, C, law=SensorLaw()):
    """Class-probability vector for one projected target."""
    if C < 2:
        raise ValueError("need at least two classes")
    p = true_class_probability(tp.area, tp.skew, tp.fits_in_image, law)
    return class_vectors(p, [true_class], C)[0]


@dataclass
class Observation:
    probs: np.ndarray    # (M, C)
    visible: np.ndarray  # (M,) bool
    area: np.ndarray
    skew: np.ndarray
    fits: np.ndarray
    p_true: np.ndarray


def scan(drone, targets, cam, world, kernels=None):
    """Run the batched geometry kernel over a :class:`~activecls.world.TargetSet`."""
    k = kernels if kernels is not None else backend
    return k.scan_targets(camera_position(drone), float(drone.yaw), cam.pitch, targets.positions,
                          targets.facing, world.target_radius, world.target_height, cam.focal_px,
                          float(cam.image_width), float(cam.image_height), cam.arc_samples)


def observe_all(drone, targets, cam, world, C, law=SensorLaw(), kernels=None):
    """Measurements for every target; invisible targets get exactly uniform rows."""
    m = len(targets)
    if m == 0:
        empty = np.zeros(0)
        return Observation(np.zeros((0, C)), np.zeros(0, dtype=bool), empty, empty,
                           np.zeros(0, dtype=bool), empty)
    visible, area, skew, fits = scan(drone, targets, cam, world, kernels)
    visible = visible.astype(bool)
    p_true = np.where(visible, true_class_probability(area, skew, fits, law), 0.0)
    probs = class_vectors(p_true, targets.class_ids, C)
    probs[~visible] = 1.0 / C
    return Observation(probs, visible, area, skew, fits.astype(bool), p_true)
