import logging
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.transform import Rotation

from diffpy.polelift.controller import compute_errors
from diffpy.polelift.gripper import GripperCommand, GripperPhase, GripperTiming, grasp_sequencer, radial_tolerance
from diffpy.polelift.so3 import hat
from diffpy.polelift.trajectory import fit_poly9, sample_setpoint, segment_duration
from diffpy.polelift.vehicle import PayloadSpec

logger = logging.getLogger(__name__)

Z_AXIS = np.array([0.0, 0.0, 1.0])


class MissionPhase(Enum):
    TAKEOFF = "Takeoff"
    FLY_OVER_POLE = "FlyOverPole"
    DESCEND = "Descend"
    GRASP = "Grasp"
    LIFT = "Lift"
    TRANSPORT = "Transport"
    PLACE = "Place"
    RELEASE = "Release"
    ASCEND = "Ascend"
    RETURN_HOME = "ReturnHome"
    LAND = "Land"


class MissionOutcome(Enum):
    RUNNING = "running"
    SUCCESS = "success"
    ABORTED = "aborted"


@dataclass(frozen=True, eq=False)
class PoleSpec:
    """
    A pole standing upright in the scene.

    Attributes
    ----------
    name str
    base numpy.ndarray
        world position of the pole bottom center, m
    length float
        m
    mass float
        kg
    radius float
        m

    """

    name: str
    base: np.ndarray
    length: float
    mass: float
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        if self.length <= 0 or self.mass <= 0 or self.radius <= 0:
            raise ValueError(
                f"Pole {self.name} needs positive length, mass and radius, got length={self.length}, "
                f"mass={self.mass}, radius={self.radius}."
            )

    @property
    def top(self):
        return float(self.base[2] + self.length)

    def payload(self, grasp_offset=0.0):
        return PayloadSpec.tube(self.mass, self.length, self.radius, offset=(0.0, 0.0, grasp_offset))


@dataclass(frozen=True, eq=False)
class MountSpec:
    """
    Conical mount the poles are stacked on.

    Attributes
    ----------
    position numpy.ndarray
        world position of the support surface center, m
    acceptance_radius float
        largest radial placement error the cone still guides into place, m

    """

    position: np.ndarray
    acceptance_radius: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        if self.acceptance_radius <= 0:
            raise ValueError(f"Mount acceptance radius must be positive, got {self.acceptance_radius}.")


@dataclass(frozen=True)
class MissionSettings:
    """
    Tuning of the stacking mission.

    Attributes
    ----------
    clearance float
        vertical margin kept above pole tops and the stack, m
    takeoff_height float
        climb above the home pad before the first transit, m
    max_speed float
        average speed cap of a segment, m/s
    max_acceleration float
        peak acceleration cap of a segment, m/s^2
    min_segment_duration float
        s
    gate_dwell float
        time the radial error must stay below the gripper tolerance before grasping, s
    grasp_timeout float
        time after the descent ends before the grasp attempt is abandoned, s
    max_attempts int
        grasp attempts per pole before the mission aborts
    release_timeout float
        time a release may stay refused before the mission aborts, s
    freeze_margin float
        the integral stays frozen this long after a grasp or release completes, s
    ground_tolerance float
        the pole counts as supported when its bottom is this close to the support surface, m
    time_limit float
        s

    """

    clearance: float = 0.4
    takeoff_height: float = 1.0
    max_speed: float = 0.5
    max_acceleration: float = 0.25
    min_segment_duration: float = 1.0
    gate_dwell: float = 1.0
    grasp_timeout: float = 10.0
    max_attempts: int = 3
    release_timeout: float = 15.0
    freeze_margin: float = 1.0
    ground_tolerance: float = 0.01
    time_limit: float = 600.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"Mission setting {name} must be positive, got {value}.")


@dataclass(frozen=True)
class Placement:
    pole: str
    time: float
    radial_error: float
    tip_radial_error: float
    height_error: float
    success: bool


def compute_radial_error(e_p):
    """Horizontal norm of a position error, m."""
    return float(np.linalg.norm(np.asarray(e_p, dtype=float)[:2]))


def compute_tip_error(e_p, e_R, length):
    """
    Position error at the bottom tip of a pole held at its middle.

    Parameters
    ----------
    e_p array_like
        position error of the vehicle, m
    e_R array_like
        attitude error vector, rad
    length float
        pole length L, m, zero when nothing is held

    Returns
    -------
    e_p,tip = e_p - (L/2) hat(e_R) z_w

    """
    return np.asarray(e_p, dtype=float) - 0.5 * length * hat(e_R) @ Z_AXIS


def compute_attitude_errors(rotation, desired_rotation):
    """Roll and pitch of R_des^T R, rad."""
    roll, pitch, _ = Rotation.from_matrix(desired_rotation.T @ rotation).as_euler("xyz")
    return float(roll), float(pitch)


def pole_bottom(state, payload):
    """World position of the bottom of a held pole."""
    return state.position + state.rotation @ (payload.offset - 0.5 * payload.length * Z_AXIS)


def over_pole_point(pole, clearance):
    return np.array([pole.base[0], pole.base[1], pole.top + clearance])


def grasp_point(pole, grasp_offset):
    return np.array([pole.base[0], pole.base[1], pole.base[2] + 0.5 * pole.length - grasp_offset])


def carry_altitude(obstacle_top, pole_length, grasp_offset, clearance):
    """Body altitude that keeps the bottom of the held pole clearance above obstacle_top."""
    return obstacle_top + clearance + 0.5 * pole_length - grasp_offset


class MetricsRecorder:
    """
    Time series of the precision metrics with per-phase aggregation.
    """

    def __init__(self):
        self.records = []

    def record(self, t, phase, e_r, e_r_tip, roll, pitch):
        if self.records and t <= self.records[-1][0]:
            raise ValueError(f"Metric records must be time-monotone, got t={t} after t={self.records[-1][0]}.")
        self.records.append((t, phase, e_r, e_r_tip, abs(roll), abs(pitch)))

    def aggregates(self):
        """
        Mean and max of every metric per phase, in order of first appearance.

        Returns
        -------
        dict phase -> dict of floats, angles in degrees
        """
        grouped = defaultdict(list)
        for _, phase, *values in self.records:
            grouped[phase].append(values)
        result = {}
        for phase, values in grouped.items():
            values = np.array(values)
            values[:, 2:] = np.degrees(values[:, 2:])
            entry = {"samples": len(values)}
            for column, name in enumerate(("e_r", "e_r_tip", "roll_deg", "pitch_deg")):
                entry[f"{name}_mean"] = float(values[:, column].mean())
                entry[f"{name}_max"] = float(values[:, column].max())
            result[phase] = entry
        return result


class Mission:
    """
    The two-pole stacking script as a state machine ticked at planner rate.

    Parameters
    ----------
    poles list of PoleSpec
        the poles, stacked in this order
    mount MountSpec
        the stack site
    home array_like
        take-off and landing position, m
    gripper GripperGeometry
        sets the radial tolerance of the grasp gate
    vehicle object
        receives attach_payload(payload), detach_payload() and freeze_integral(frozen)
    timing GripperTiming
    grasp_offset float
        body-frame z offset from the geometric center to the held pole's middle, m
    settings MissionSettings

    """

    def __init__(
        self, poles, mount, home, gripper, vehicle, timing=GripperTiming(), grasp_offset=0.0, settings=None
    ):
        if not poles:
            raise ValueError("A mission needs at least one pole.")
        self.poles = list(poles)
        self.mount = mount
        self.home = np.asarray(home, dtype=float)
        self.gripper = gripper
        self.vehicle = vehicle
        self.timing = timing
        self.grasp_offset = grasp_offset
        self.settings = MissionSettings() if settings is None else settings
        self.tolerance = radial_tolerance(gripper)
        self.outcome = MissionOutcome.RUNNING
        self.abort_reason = None
        self.transitions = []
        self.placements = []
        self.gripper_phase = GripperPhase.OPEN
        self.gripper_events = []
        self.pole_index = 0
        self.attempts = 0
        self.placed_length = 0.0
        self.payload = None
        self.phase = None
        self._segment = fit_poly9(self.home, self.home, 1.0)
        self._segment_start = 0.0
        self._phase_start = 0.0
        self._gate_since = None
        self._sequence_end = None
        self._refusal_logged = False
        self._handlers = {
            MissionPhase.TAKEOFF: self._takeoff,
            MissionPhase.FLY_OVER_POLE: self._fly_over_pole,
            MissionPhase.DESCEND: self._descend,
            MissionPhase.GRASP: self._grasp,
            MissionPhase.LIFT: self._lift,
            MissionPhase.TRANSPORT: self._transport,
            MissionPhase.PLACE: self._place,
            MissionPhase.RELEASE: self._release,
            MissionPhase.ASCEND: self._ascend,
            MissionPhase.RETURN_HOME: self._return_home,
            MissionPhase.LAND: self._land,
        }
        self._begin(0.0, MissionPhase.TAKEOFF, self.home + self.settings.takeoff_height * Z_AXIS)

    @property
    def finished(self):
        return self.outcome is not MissionOutcome.RUNNING

    @property
    def pole(self):
        return self.poles[min(self.pole_index, len(self.poles) - 1)]

    @property
    def support_height(self):
        return float(self.mount.position[2] + self.placed_length)

    @property
    def tip_lever(self):
        return 0.0 if self.payload is None else 0.5 * self.payload.length

    def step(self, t, measured, truth):
        """
        Advance the mission by one planner tick.

        Parameters
        ----------
        t float
            the mission clock, s
        measured RigidState
            what the vehicle knows, used for the grasp gate
        truth RigidState
            the physical state, used for support contact and placement records

        Returns
        -------
        the Setpoint to track until the next tick

        """
        if not self.finished:
            if t >= self.settings.time_limit:
                self._abort(t, f"mission time limit of {self.settings.time_limit} s reached")
            else:
                self._handlers[self.phase](t, measured, truth)
        return self.setpoint(t)

    def setpoint(self, t):
        return sample_setpoint(self._segment, t - self._segment_start)

    def _begin(self, t, phase, target=None):
        logger.info("t=%.2f s: %s -> %s", t, self.phase.value if self.phase else "start", phase.value)
        self.phase = phase
        self._phase_start = t
        self.transitions.append((round(t, 6), phase.value))
        if target is not None:
            start = self._segment.end
            duration = segment_duration(
                float(np.linalg.norm(target - start)),
                self.settings.max_speed,
                self.settings.max_acceleration,
                self.settings.min_segment_duration,
            )
            self._segment = fit_poly9(start, target, duration)
            self._segment_start = t

    def _segment_done(self, t):
        return t - self._segment_start >= self._segment.duration

    def _abort(self, t, reason):
        logger.error("t=%.2f s: mission aborted in %s: %s", t, self.phase.value, reason)
        self.outcome = MissionOutcome.ABORTED
        self.abort_reason = reason

    def _carry_altitude(self):
        standing = [pole.top for index, pole in enumerate(self.poles) if index > self.pole_index]
        obstacle_top = max(standing + [self.support_height])
        return carry_altitude(obstacle_top, self.pole.length, self.grasp_offset, self.settings.clearance)

    def _takeoff(self, t, measured, truth):
        if self._segment_done(t):
            self._begin(t, MissionPhase.FLY_OVER_POLE, over_pole_point(self.pole, self.settings.clearance))

    def _fly_over_pole(self, t, measured, truth):
        if self._segment_done(t):
            self._gate_since = None
            self._begin(t, MissionPhase.DESCEND, grasp_point(self.pole, self.grasp_offset))

    def _descend(self, t, measured, truth):
        if not self._segment_done(t):
            return
        e_r = compute_radial_error(measured.position - self.pole.base)
        if e_r < self.tolerance:
            if self._gate_since is None:
                self._gate_since = t
            elif t - self._gate_since >= self.settings.gate_dwell:
                self._start_grasp(t)
                return
        else:
            self._gate_since = None
        if t - self._segment_start - self._segment.duration >= self.settings.grasp_timeout:
            self.attempts += 1
            if self.attempts >= self.settings.max_attempts:
                self._abort(t, f"grasp gate of {self.pole.name} not met in {self.attempts} attempts")
                return
            logger.warning(
                "t=%.2f s: radial error %.4f m above tolerance %.4f m, retrying grasp of %s (attempt %d)",
                t,
                e_r,
                self.tolerance,
                self.pole.name,
                self.attempts + 1,
            )
            self._begin(t, MissionPhase.FLY_OVER_POLE, over_pole_point(self.pole, self.settings.clearance))

    def _start_grasp(self, t):
        self._begin(t, MissionPhase.GRASP)
        self.vehicle.freeze_integral(True)
        self.gripper_phase, events = grasp_sequencer(
            self.gripper_phase, GripperCommand.GRASP, True, t, self.timing
        )
        self._log_events(events)
        self._sequence_end = t + self.timing.total

    def _grasp(self, t, measured, truth):
        if self.payload is None and t >= self._sequence_end:
            self.payload = self.pole.payload(self.grasp_offset)
            self.vehicle.attach_payload(self.payload)
            logger.info("t=%.2f s: %s locked, %.2f kg attached", t, self.pole.name, self.payload.mass)
        if self.payload is not None and t >= self._sequence_end + self.settings.freeze_margin:
            self.vehicle.freeze_integral(False)
            target = grasp_point(self.pole, self.grasp_offset)
            target[2] = self._carry_altitude()
            self._begin(t, MissionPhase.LIFT, target)

    def _lift(self, t, measured, truth):
        if self._segment_done(t):
            target = self._segment.end
            target[:2] = self.mount.position[:2]
            self._begin(t, MissionPhase.TRANSPORT, target)

    def _transport(self, t, measured, truth):
        if self._segment_done(t):
            target = self.mount.position.copy()
            target[2] = self.support_height + 0.5 * self.pole.length - self.grasp_offset
            self._begin(t, MissionPhase.PLACE, target)

    def _place(self, t, measured, truth):
        if self._segment_done(t):
            self._begin(t, MissionPhase.RELEASE)
            self.vehicle.freeze_integral(True)
            self._sequence_end = None
            self._refusal_logged = False

    def _release(self, t, measured, truth):
        if self._sequence_end is None:
            bottom = pole_bottom(truth, self.payload)
            on_ground = abs(bottom[2] - self.support_height) <= self.settings.ground_tolerance
            try:
                self.gripper_phase, events = grasp_sequencer(
                    self.gripper_phase, GripperCommand.RELEASE, on_ground, t, self.timing
                )
            except ValueError as error:
                if not self._refusal_logged:
                    logger.warning(
                        "t=%.2f s: release refused, pole bottom %.4f m from support: %s",
                        t,
                        bottom[2] - self.support_height,
                        error,
                    )
                    self._refusal_logged = True
                if t - self._phase_start >= self.settings.release_timeout:
                    self._abort(t, f"release of {self.pole.name} refused for {self.settings.release_timeout} s")
                return
            self._log_events(events)
            self._sequence_end = t + self.timing.total
            placement = self._record_placement(t, truth)
            if not placement.success:
                self._abort(t, f"{placement.pole} missed the mount by {placement.tip_radial_error:.4f} m")
                return
        if self.payload is not None and t >= self._sequence_end:
            self.vehicle.detach_payload()
            logger.info("t=%.2f s: %s released", t, self.pole.name)
            self.placed_length += self.payload.length
            self.payload = None
            self.pole_index += 1
        if self.payload is None and t >= self._sequence_end + self.settings.freeze_margin:
            self.vehicle.freeze_integral(False)
            target = self.mount.position.copy()
            target[2] = self.support_height + self.settings.clearance
            self._begin(t, MissionPhase.ASCEND, target)

    def _record_placement(self, t, truth):
        bottom = pole_bottom(truth, self.payload)
        errors = compute_errors(truth, self.setpoint(t))
        tip = compute_tip_error(errors.position, errors.rotation, self.payload.length)
        placement = Placement(
            pole=self.pole.name,
            time=round(t, 6),
            radial_error=compute_radial_error(bottom - self.mount.position),
            tip_radial_error=compute_radial_error(tip),
            height_error=float(bottom[2] - self.support_height),
            success=compute_radial_error(tip) < self.mount.acceptance_radius,
        )
        logger.info(
            "t=%.2f s: %s placed, radial error %.4f m, tip radial error %.4f m",
            t,
            placement.pole,
            placement.radial_error,
            placement.tip_radial_error,
        )
        self.placements.append(placement)
        return placement

    def _ascend(self, t, measured, truth):
        if not self._segment_done(t):
            return
        if self.pole_index < len(self.poles):
            self.attempts = 0
            self._begin(t, MissionPhase.FLY_OVER_POLE, over_pole_point(self.pole, self.settings.clearance))
        else:
            target = self._segment.end
            target[:2] = self.home[:2]
            self._begin(t, MissionPhase.RETURN_HOME, target)

    def _return_home(self, t, measured, truth):
        if self._segment_done(t):
            self._begin(t, MissionPhase.LAND, self.home.copy())

    def _land(self, t, measured, truth):
        if self._segment_done(t):
            logger.info("t=%.2f s: landed, %d poles placed", t, len(self.placements))
            self.outcome = MissionOutcome.SUCCESS

    def _log_events(self, events):
        for event in events:
            logger.info("gripper %s at t=%.2f s", event.action, event.time)
        self.gripper_events.extend(events)
