from dataclasses import dataclass
from enum import Enum

import numpy as np


N_TRIANGLES = 3
RELEASE_UNDER_LOAD_MESSAGE = "self-locking cannot release under load"


class GripperPhase(Enum):
    OPEN = "open"
    CENTERED = "centered"
    LOCKED = "locked"


class GripperCommand(Enum):
    GRASP = "grasp"
    RELEASE = "release"


@dataclass(frozen=True)
class GripperGeometry:
    """
    Geometry of the centering and lifting mechanisms.

    Attributes
    ----------
    incircle_radius float
        R, radius of the incircle of the centering triangle, m
    pole_radius_min, pole_radius_max float
        the range of pole radii the gripper accepts, m
    fold_angle float
        alpha, angle between the body xy-plane and the folding triangles, rad
    friction float
        mu, static friction coefficient at the triangle tips

    """

    incircle_radius: float
    pole_radius_min: float
    pole_radius_max: float
    fold_angle: float
    friction: float

    def __post_init__(self):
        if not 0 < self.pole_radius_min <= self.pole_radius_max < self.incircle_radius:
            raise ValueError(
                f"Gripper radii must satisfy 0 < r_min <= r_max < R (radial tolerance R - r_max > 0), got "
                f"r_min={self.pole_radius_min}, r_max={self.pole_radius_max}, R={self.incircle_radius}."
            )
        if not 0 < self.fold_angle < np.pi / 2:
            raise ValueError(f"Fold angle must lie in (0, pi/2) rad, got {self.fold_angle}.")
        if self.friction <= 0:
            raise ValueError(f"Friction coefficient must be positive, got {self.friction}.")


@dataclass(frozen=True)
class GripperTiming:
    centering_time: float = 2.0
    locking_time: float = 2.0

    @property
    def total(self):
        return self.centering_time + self.locking_time


@dataclass(frozen=True)
class GripperEvent:
    action: str
    time: float


@dataclass(frozen=True)
class LiftingStatics:
    """
    Forces the three folding triangles exert on the pole.

    Attributes
    ----------
    friction numpy.ndarray
        3x3, row i is the friction force of triangle i, N
    normal numpy.ndarray
        3x3, row i is the normal force of triangle i, N
    net_normal numpy.ndarray
        sum of the normal forces, N
    net_torque numpy.ndarray
        torque of all contact forces about the gripper center, N m

    """

    friction: np.ndarray
    normal: np.ndarray
    net_normal: np.ndarray
    net_torque: np.ndarray


def radial_tolerance(geom):
    """
    Admissible lateral misalignment between the vehicle and the pole while grasping, t = R - r_max.
    """
    return geom.incircle_radius - geom.pole_radius_max


def pole_fits(geom, radius):
    return geom.pole_radius_min <= radius <= geom.pole_radius_max


def self_lock_check(geom, fold_angle=None):
    """
    Check the self-locking condition mu >= tan(alpha).

    Parameters
    ----------
    geom GripperGeometry
        the gripper geometry
    fold_angle float
        overrides geom.fold_angle, rad

    Returns
    -------
    True when the lifting mechanism holds any load weight

    """
    alpha = geom.fold_angle if fold_angle is None else fold_angle
    # non-strict, the boundary alpha = atan(mu) holds
    return geom.friction >= np.tan(alpha) or np.isclose(geom.friction, np.tan(alpha), rtol=1e-12, atol=0.0)


def _triangle_directions():
    angles = 2 * np.pi * np.arange(N_TRIANGLES) / N_TRIANGLES
    return np.column_stack([np.cos(angles), np.sin(angles), np.zeros(N_TRIANGLES)])


def lifting_statics(geom, weight, fold_angle_offsets=(0.0, 0.0, 0.0), triangle_length=0.1, pole_radius=None):
    """
    Static contact forces of the self-locking lifting mechanism.

    Parameters
    ----------
    geom GripperGeometry
        the gripper geometry
    weight float
        magnitude of the total pole weight |f_g|, N
    fold_angle_offsets sequence of float
        per-triangle deviation from geom.fold_angle, rad
    triangle_length float
        hinge-to-tip length of a folding triangle, m, only used for the contact heights
    pole_radius float
        radius of the held pole, defaults to geom.pole_radius_max

    Returns
    -------
    a LiftingStatics

    each triangle carries |f_g|/3 by friction, pointing up, and presses radially inward with
    |f_n,i| = |f_f,i| / tan(alpha_i). We raise a ValueError if any triangle violates the self-locking condition.

    """
    if weight < 0:
        raise ValueError(f"Pole weight must be non-negative, got {weight}.")
    angles = geom.fold_angle + np.asarray(fold_angle_offsets, dtype=float)
    for alpha in angles:
        if not self_lock_check(geom, alpha):
            raise ValueError(
                f"Self-locking condition mu >= tan(alpha) fails (mu={geom.friction}, "
                f"tan(alpha)={np.tan(alpha):.6f}); the pole would slip. "
                f"Please rerun with a smaller fold angle or a higher friction coefficient."
            )
    radius = geom.pole_radius_max if pole_radius is None else pole_radius
    outward = _triangle_directions()
    friction_magnitude = weight / N_TRIANGLES
    friction = np.tile([0.0, 0.0, friction_magnitude], (N_TRIANGLES, 1))
    normal = -(friction_magnitude / np.tan(angles))[:, None] * outward
    heights = -triangle_length * (np.sin(angles) - np.sin(geom.fold_angle))
    contacts = radius * outward + heights[:, None] * np.array([0.0, 0.0, 1.0])
    net_torque = np.cross(contacts, friction + normal).sum(axis=0)
    return LiftingStatics(friction, normal, normal.sum(axis=0), net_torque)


def grasp_sequencer(phase, command, pole_on_ground, t0=0.0, timing=GripperTiming()):
    """
    Advance the gripper through a grasp or release sequence.

    Parameters
    ----------
    phase GripperPhase
        the current gripper phase
    command GripperCommand
        grasp or release
    pole_on_ground bool
        whether the pole's weight is carried by the ground or a support
    t0 float
        the time the command is issued, s
    timing GripperTiming
        the actuation durations

    Returns
    -------
    the new GripperPhase and the list of GripperEvent, each stamped with its start time

    grasp runs Open -> Centered -> Locked, centering first; release reverses the order and is refused with a
    ValueError while the pole hangs in the gripper, leaving the phase unchanged

    """
    if command is GripperCommand.GRASP:
        if phase is GripperPhase.OPEN:
            events = [GripperEvent("center", t0), GripperEvent("lock", t0 + timing.centering_time)]
        elif phase is GripperPhase.CENTERED:
            events = [GripperEvent("lock", t0)]
        else:
            raise ValueError("Gripper is already locked. Please release before grasping again.")
        return GripperPhase.LOCKED, events
    if phase is GripperPhase.OPEN:
        raise ValueError("Gripper is already open. Nothing to release.")
    if phase is GripperPhase.LOCKED:
        if not pole_on_ground:
            raise ValueError(RELEASE_UNDER_LOAD_MESSAGE)
        events = [GripperEvent("unlock", t0), GripperEvent("uncenter", t0 + timing.locking_time)]
    else:
        events = [GripperEvent("uncenter", t0)]
    return GripperPhase.OPEN, events
