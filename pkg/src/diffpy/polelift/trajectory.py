from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.polynomial import polynomial as P

from diffpy.polelift.controller import Setpoint
from diffpy.polelift.so3 import rot_z

DEGREE = 9
N_BOUNDARY_DERIVATIVES = 5


class WaypointAction(Enum):
    NONE = "none"
    GRASP = "grasp"
    RELEASE = "release"


@dataclass(frozen=True, eq=False)
class Waypoint:
    """
    A rest point of the flight plan.

    Attributes
    ----------
    position numpy.ndarray
        m
    yaw float
        rad
    hold float
        time spent at rest once reached, s
    action WaypointAction
        what the gripper does while holding

    """

    position: np.ndarray
    yaw: float = 0.0
    hold: float = 0.0
    action: WaypointAction = WaypointAction.NONE

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if not (np.all(np.isfinite(self.position)) and np.isfinite(self.yaw) and np.isfinite(self.hold)):
            raise ValueError(f"Waypoint must be finite, got position={self.position}, yaw={self.yaw}.")
        if self.hold < 0:
            raise ValueError(f"Waypoint hold time must be non-negative, got {self.hold}.")


@dataclass(frozen=True, eq=False)
class PolySegment:
    """
    Rest-to-rest degree-9 segment.

    Attributes
    ----------
    coefficients numpy.ndarray
        10x3, ascending powers of the normalized time s = t / duration, one column per axis
    duration float
        s
    yaw_start, yaw_end float
        rad, interpolated linearly

    """

    coefficients: np.ndarray
    duration: float
    yaw_start: float = 0.0
    yaw_end: float = 0.0

    def evaluate(self, t, order=0):
        """Derivative of the given order at time t, zero outside [0, duration] for order > 0."""
        if order > 0 and not 0.0 <= t <= self.duration:
            return np.zeros(3)
        s = min(max(t / self.duration, 0.0), 1.0)
        coefficients = P.polyder(self.coefficients, order, axis=0) if order else self.coefficients
        return P.polyval(s, coefficients) / self.duration**order

    @property
    def start(self):
        return self.coefficients[0].copy()

    @property
    def end(self):
        return self.coefficients.sum(axis=0)


def _boundary_rows(s):
    basis = np.eye(DEGREE + 1)
    return np.array([P.polyval(s, P.polyder(basis, k, axis=0)) for k in range(N_BOUNDARY_DERIVATIVES)])


def fit_poly9(p0, p1, duration, yaw_start=0.0, yaw_end=0.0):
    """
    Degree-9 polynomial from p0 to p1 with zero velocity, acceleration, jerk and snap at both ends.

    Parameters
    ----------
    p0, p1 array_like
        the start and end positions, m
    duration float
        T, s
    yaw_start, yaw_end float
        headings at both ends, rad

    Returns
    -------
    a PolySegment

    the 10 boundary conditions per axis are solved in normalized time, which for a unit move gives
    126 s^5 - 420 s^6 + 540 s^7 - 315 s^8 + 70 s^9

    """
    if duration <= 0:
        raise ValueError(f"Segment duration must be positive, got {duration}.")
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    system = np.vstack([_boundary_rows(0.0), _boundary_rows(1.0)])
    rhs = np.zeros((2 * N_BOUNDARY_DERIVATIVES, 3))
    rhs[0] = p0
    rhs[N_BOUNDARY_DERIVATIVES] = p1
    return PolySegment(np.linalg.solve(system, rhs), float(duration), float(yaw_start), float(yaw_end))


def sample_setpoint(segment, t):
    """
    Setpoint on a segment at time t, measured from the segment start.

    Parameters
    ----------
    segment PolySegment
        the segment
    t float
        s, clamped to [0, duration] with zero derivatives outside

    Returns
    -------
    a flat Setpoint

    """
    inside = 0.0 <= t <= segment.duration
    s = min(max(t / segment.duration, 0.0), 1.0)
    yaw = segment.yaw_start + (segment.yaw_end - segment.yaw_start) * s
    yaw_rate = (segment.yaw_end - segment.yaw_start) / segment.duration if inside else 0.0
    return Setpoint(
        position=segment.evaluate(t),
        velocity=segment.evaluate(t, 1),
        acceleration=segment.evaluate(t, 2),
        rotation=rot_z(yaw),
        angular_velocity=np.array([0.0, 0.0, yaw_rate]),
    )


def _peak_normalized_acceleration():
    unit = fit_poly9(np.zeros(3), np.ones(3), 1.0).coefficients[:, 0]
    acceleration = P.polyder(unit, 2)
    candidates = [root.real for root in P.polyroots(P.polyder(acceleration)) if abs(root.imag) < 1e-12]
    candidates = [s for s in candidates if 0.0 <= s <= 1.0] + [0.0, 1.0]
    return float(max(abs(P.polyval(s, acceleration)) for s in candidates))


PEAK_NORMALIZED_ACCELERATION = _peak_normalized_acceleration()


def segment_duration(distance, max_speed=0.5, max_acceleration=0.25, min_duration=1.0):
    """
    Duration of a rest-to-rest segment.

    Parameters
    ----------
    distance float
        straight-line length, m
    max_speed float
        cap on the average speed, m/s
    max_acceleration float
        cap on the peak acceleration along the segment, m/s^2
    min_duration float
        s

    Returns
    -------
    the duration in s

    """
    if max_speed <= 0 or max_acceleration <= 0 or min_duration <= 0:
        raise ValueError(
            f"Speed, acceleration and duration caps must be positive, got max_speed={max_speed}, "
            f"max_acceleration={max_acceleration}, min_duration={min_duration}."
        )
    return max(
        min_duration,
        distance / max_speed,
        float(np.sqrt(PEAK_NORMALIZED_ACCELERATION * distance / max_acceleration)),
    )


def plan_segments(waypoints, max_speed=0.5, max_acceleration=0.25, min_duration=1.0):
    """
    Chain rest-to-rest segments through a list of waypoints.

    Returns
    -------
    a list of (start time, PolySegment) pairs, hold times inserted after each waypoint

    """
    schedule = []
    t = waypoints[0].hold if waypoints else 0.0
    for start, end in zip(waypoints[:-1], waypoints[1:]):
        distance = float(np.linalg.norm(end.position - start.position))
        duration = segment_duration(distance, max_speed, max_acceleration, min_duration)
        schedule.append((t, fit_poly9(start.position, end.position, duration, start.yaw, end.yaw)))
        t += duration + end.hold
    return schedule
