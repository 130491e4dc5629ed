import re
from dataclasses import replace

import numpy as np
import pytest

from diffpy.polelift.dynamics import RigidState
from diffpy.polelift.gripper import GripperPhase
from diffpy.polelift.mission import (
    MetricsRecorder,
    Mission,
    MissionOutcome,
    MissionPhase,
    MissionSettings,
    MountSpec,
    PoleSpec,
    carry_altitude,
    compute_attitude_errors,
    compute_radial_error,
    compute_tip_error,
    grasp_point,
    over_pole_point,
    pole_bottom,
)
from diffpy.polelift.so3 import rot_z, rotation_exp
from diffpy.polelift.vehicle import PayloadSpec

NOMINAL_PHASES = [
    "Takeoff",
    "FlyOverPole",
    "Descend",
    "Grasp",
    "Lift",
    "Transport",
    "Place",
    "Release",
    "Ascend",
    "FlyOverPole",
    "Descend",
    "Grasp",
    "Lift",
    "Transport",
    "Place",
    "Release",
    "Ascend",
    "ReturnHome",
    "Land",
]


def _mission(config, vehicle, settings=None):
    return Mission(
        config.poles,
        config.mount,
        config.home,
        config.gripper,
        vehicle,
        config.gripper_timing,
        config.grasp_offset,
        config.mission if settings is None else settings,
    )


def _fly(mission, offset=(0.0, 0.0, 0.0), dt=0.02, t_end=700.0, clock=None):
    """Tick the mission with a vehicle that sits exactly on the setpoint shifted by offset."""
    offset = np.asarray(offset, dtype=float)
    k = 0
    while not mission.finished and k * dt < t_end:
        t = k * dt
        if clock is not None:
            clock.append(t)
        setpoint = mission.setpoint(t)
        truth = RigidState(position=setpoint.position + offset, rotation=setpoint.rotation)
        mission.step(t, truth, truth)
        k += 1
    return k * dt


params_radial = [
    ([0.03, 0.04, 1.0], 0.05),
    ([0.0, 0.0, -2.0], 0.0),
    ([-0.06, 0.0, 0.0], 0.06),
]


@pytest.mark.parametrize("e_p, expected", params_radial)
def test_compute_radial_error(e_p, expected):
    assert compute_radial_error(e_p) == pytest.approx(expected)


def test_compute_tip_error_roll():
    tip = compute_tip_error([0.0, 0.0, 0.0], [0.01, 0.0, 0.0], 2.0)
    assert tip == pytest.approx([0.0, 0.01, 0.0])
    assert compute_tip_error([0.01, 0.02, 0.0], [0.3, 0.3, 0.0], 0.0) == pytest.approx([0.01, 0.02, 0.0])


def test_compute_tip_error_matches_geometry():
    rng = np.random.default_rng(11)
    length = 2.0
    for _ in range(100):
        rotation_vector = rng.normal(size=3)
        rotation_vector *= rng.uniform(0.0, 0.02) / np.linalg.norm(rotation_vector)
        R = rotation_exp(rotation_vector)
        e_p = rng.normal(0.0, 0.02, 3)
        e_R = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        tip = e_p + R @ np.array([0.0, 0.0, -0.5 * length]) - np.array([0.0, 0.0, -0.5 * length])
        linearized = compute_tip_error(e_p, e_R, length)
        angle = np.linalg.norm(rotation_vector)
        assert np.linalg.norm(linearized[:2] - tip[:2]) <= length * angle**2 + 1e-15


def test_compute_attitude_errors():
    roll, pitch = compute_attitude_errors(rotation_exp([0.1, 0.0, 0.0]), np.eye(3))
    assert (roll, pitch) == pytest.approx((0.1, 0.0))
    roll, pitch = compute_attitude_errors(rot_z(0.8) @ rotation_exp([0.0, -0.05, 0.0]), rot_z(0.8))
    assert (roll, pitch) == pytest.approx((0.0, -0.05), abs=1e-12)
    assert compute_attitude_errors(rot_z(0.3), np.eye(3)) == pytest.approx((0.0, 0.0), abs=1e-12)


def test_pole_bottom():
    payload = PayloadSpec.tube(3.0, 2.0, 0.05, offset=(0.0, 0.0, -0.1))
    state = RigidState.at_rest([1.0, 0.0, 1.0])
    assert pole_bottom(state, payload) == pytest.approx([1.0, 0.0, -0.1])
    tilted = RigidState.at_rest([0.0, 0.0, 1.0], rotation_exp([np.pi / 2, 0.0, 0.0]))
    assert pole_bottom(tilted, payload) == pytest.approx([0.0, 1.1, 1.0])


def test_waypoint_geometry(demo_config):
    pole_1, pole_2 = demo_config.poles
    assert over_pole_point(pole_1, 0.4) == pytest.approx([2.0, 0.0, 1.4])
    assert grasp_point(pole_1, 0.0) == pytest.approx([2.0, 0.0, 0.5])
    assert grasp_point(pole_1, 0.1) == pytest.approx([2.0, 0.0, 0.4])
    assert carry_altitude(pole_2.top, pole_1.length, 0.0, 0.4) == pytest.approx(1.9)
    assert carry_altitude(1.0, 2.0, 0.1, 0.4) == pytest.approx(2.3)


def test_metrics_recorder():
    recorder = MetricsRecorder()
    recorder.record(0.0, "Hover", 0.01, 0.02, np.radians(1.0), -np.radians(2.0))
    recorder.record(0.1, "Hover", 0.03, 0.04, np.radians(-3.0), 0.0)
    recorder.record(0.2, "Trajectory", 0.05, 0.05, 0.0, 0.0)
    aggregates = recorder.aggregates()
    assert list(aggregates) == ["Hover", "Trajectory"]
    hover = aggregates["Hover"]
    assert hover["samples"] == 2
    assert hover["e_r_mean"] == pytest.approx(0.02)
    assert hover["e_r_max"] == pytest.approx(0.03)
    assert hover["e_r_tip_mean"] == pytest.approx(0.03)
    assert hover["roll_deg_mean"] == pytest.approx(2.0)
    assert hover["roll_deg_max"] == pytest.approx(3.0)
    assert hover["pitch_deg_max"] == pytest.approx(2.0)
    assert aggregates["Trajectory"]["samples"] == 1


def test_metrics_recorder_monotone():
    recorder = MetricsRecorder()
    recorder.record(1.0, "Hover", 0.0, 0.0, 0.0, 0.0)
    msg = "Metric records must be time-monotone, got t=1.0 after t=1.0."
    with pytest.raises(ValueError, match=re.escape(msg)):
        recorder.record(1.0, "Hover", 0.0, 0.0, 0.0, 0.0)


def test_nominal_mission(demo_config, mocker):
    vehicle = mocker.Mock()
    mission = _mission(demo_config, vehicle)
    end = _fly(mission)
    assert mission.outcome is MissionOutcome.SUCCESS
    assert mission.abort_reason is None
    assert [phase for _, phase in mission.transitions] == NOMINAL_PHASES
    assert end < 360.0
    assert vehicle.attach_payload.call_count == 2
    assert vehicle.detach_payload.call_count == 2
    for call in vehicle.attach_payload.call_args_list:
        assert call.args[0].mass == pytest.approx(2.5)
        assert call.args[0].length == pytest.approx(1.0)
    assert [call.args[0] for call in vehicle.freeze_integral.call_args_list] == [True, False] * 4
    assert [placement.pole for placement in mission.placements] == ["pole_1", "pole_2"]
    for placement in mission.placements:
        assert placement.success
        assert placement.tip_radial_error < 0.05
        assert placement.radial_error == pytest.approx(0.0, abs=1e-9)
        assert placement.height_error == pytest.approx(0.0, abs=1e-9)
    assert mission.placed_length == pytest.approx(2.0)
    assert mission.gripper_phase is GripperPhase.OPEN
    assert [event.action for event in mission.gripper_events] == ["center", "lock", "unlock", "uncenter"] * 2


def test_mission_transition_times_increase(demo_config, mocker):
    mission = _mission(demo_config, mocker.Mock())
    _fly(mission)
    times = [t for t, _ in mission.transitions]
    assert times == sorted(times)
    assert times[0] == 0.0


def test_grasp_gate_offset_aborts(demo_config, mocker):
    vehicle = mocker.Mock()
    mission = _mission(demo_config, vehicle)
    _fly(mission, offset=(0.06, 0.0, 0.0))
    assert mission.outcome is MissionOutcome.ABORTED
    assert "not met in 3 attempts" in mission.abort_reason
    assert mission.attempts == 3
    assert [phase for _, phase in mission.transitions].count("Descend") == 3
    assert "Grasp" not in [phase for _, phase in mission.transitions]
    vehicle.attach_payload.assert_not_called()


def test_grasp_gate_within_tolerance(demo_config, mocker):
    vehicle = mocker.Mock()
    mission = _mission(demo_config, vehicle)
    _fly(mission, offset=(0.03, -0.03, 0.0))
    assert mission.outcome is MissionOutcome.SUCCESS
    assert vehicle.attach_payload.call_count == 2


def test_release_above_mount_is_refused(demo_config, mocker):
    vehicle = mocker.Mock()
    mission = _mission(demo_config, vehicle)
    _fly(mission, offset=(0.0, 0.0, 0.02))
    assert mission.outcome is MissionOutcome.ABORTED
    assert "refused" in mission.abort_reason
    assert mission.phase is MissionPhase.RELEASE
    assert mission.gripper_phase is GripperPhase.LOCKED
    assert vehicle.attach_payload.call_count == 1
    vehicle.detach_payload.assert_not_called()
    assert mission.placements == []


def test_integral_frozen_during_grasp_and_release(demo_config, mocker):
    clock = []
    calls = []
    vehicle = mocker.Mock()
    mission = _mission(demo_config, vehicle)
    vehicle.freeze_integral.side_effect = lambda frozen: calls.append((clock[-1], mission.phase, frozen))
    _fly(mission, clock=clock)
    assert len(calls) == 8
    for (t_on, phase_on, frozen_on), (t_off, phase_off, frozen_off) in zip(calls[::2], calls[1::2]):
        assert frozen_on and not frozen_off
        assert phase_on is phase_off
        assert phase_on in (MissionPhase.GRASP, MissionPhase.RELEASE)
        assert t_off - t_on >= demo_config.gripper_timing.total + demo_config.mission.freeze_margin - 1e-9


def test_payload_attached_when_lock_completes(demo_config, mocker):
    clock = []
    vehicle = mocker.Mock()
    mission = _mission(demo_config, vehicle)
    attached = []
    vehicle.attach_payload.side_effect = lambda payload: attached.append(clock[-1])
    _fly(mission, clock=clock)
    grasp_starts = [t for t, phase in mission.transitions if phase == "Grasp"]
    for start, attach_time in zip(grasp_starts, attached):
        assert attach_time == pytest.approx(start + demo_config.gripper_timing.total, abs=0.021)


def test_time_limit_aborts(demo_config, mocker):
    settings = replace(demo_config.mission, time_limit=5.0)
    mission = _mission(demo_config, mocker.Mock(), settings)
    _fly(mission)
    assert mission.outcome is MissionOutcome.ABORTED
    assert "time limit" in mission.abort_reason


def test_mission_needs_poles(demo_config, mocker):
    with pytest.raises(ValueError, match=re.escape("A mission needs at least one pole.")):
        Mission([], demo_config.mount, demo_config.home, demo_config.gripper, mocker.Mock())


params_settings_bad = [
    ({"clearance": 0.0}, "Mission setting clearance must be positive, got 0.0."),
    ({"max_attempts": 0}, "Mission setting max_attempts must be positive, got 0."),
]


@pytest.mark.parametrize("inputs, msg", params_settings_bad)
def test_mission_settings_bad(inputs, msg):
    with pytest.raises(ValueError, match=re.escape(msg)):
        MissionSettings(**inputs)


def test_pole_and_mount_bad():
    with pytest.raises(ValueError, match="needs positive length, mass and radius"):
        PoleSpec("bent", [0.0, 0.0, 0.0], 1.0, -2.0, 0.05)
    with pytest.raises(ValueError, match=re.escape("Mount acceptance radius must be positive, got 0.0.")):
        MountSpec([0.0, 2.0, 0.0], 0.0)
