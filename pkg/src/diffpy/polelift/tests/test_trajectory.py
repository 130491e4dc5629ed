import re

import numpy as np
import pytest

from diffpy.polelift.so3 import yaw_of
from diffpy.polelift.trajectory import (
    Waypoint,
    WaypointAction,
    fit_poly9,
    plan_segments,
    sample_setpoint,
    segment_duration,
)


def test_unit_move_coefficients():
    segment = fit_poly9(np.zeros(3), np.ones(3), 1.0)
    expected = [0.0, 0.0, 0.0, 0.0, 0.0, 126.0, -420.0, 540.0, -315.0, 70.0]
    for axis in range(3):
        assert segment.coefficients[:, axis] == pytest.approx(expected, abs=1e-9)
    assert segment.evaluate(0.5) == pytest.approx(np.full(3, 0.5), abs=1e-12)


def test_constant_segment():
    p = np.array([1.0, -2.0, 0.5])
    segment = fit_poly9(p, p, 3.0)
    for t in np.linspace(0.0, 3.0, 7):
        assert segment.evaluate(t) == pytest.approx(p, abs=1e-12)
        for order in range(1, 5):
            assert segment.evaluate(t, order) == pytest.approx(np.zeros(3), abs=1e-12)


params_boundary = [
    ([0.0, 0.0, 0.0], [2.0, 0.0, 1.4], 6.0),
    ([2.0, 1.5, 1.9], [0.0, 2.0, 0.5], 4.2),
    ([-1.0, 3.0, 0.2], [-1.0, 3.0, 2.2], 1.0),
]


@pytest.mark.parametrize("p0, p1, duration", params_boundary)
def test_boundary_conditions(p0, p1, duration):
    segment = fit_poly9(p0, p1, duration)
    assert segment.start == pytest.approx(p0, abs=1e-9)
    assert segment.end == pytest.approx(p1, abs=1e-9)
    assert segment.evaluate(duration) == pytest.approx(p1, abs=1e-9)
    for order in range(1, 5):
        assert segment.evaluate(0.0, order) == pytest.approx(np.zeros(3), abs=1e-9)
        assert segment.evaluate(duration, order) == pytest.approx(np.zeros(3), abs=1e-9)


def test_segment_end_is_a_copy():
    segment = fit_poly9(np.zeros(3), np.ones(3), 2.0)
    end = segment.end
    end[0] = 10.0
    assert segment.end == pytest.approx(np.ones(3))


def test_sample_setpoint_matches_finite_differences():
    segment = fit_poly9([0.0, 0.0, 0.0], [2.0, -1.0, 1.5], 5.0, yaw_start=0.0, yaw_end=1.0)
    h = 1e-5
    for t in (0.7, 2.5, 4.1):
        setpoint = sample_setpoint(segment, t)
        ahead, behind = sample_setpoint(segment, t + h), sample_setpoint(segment, t - h)
        velocity = (ahead.position - behind.position) / (2 * h)
        acceleration = (ahead.velocity - behind.velocity) / (2 * h)
        assert setpoint.velocity == pytest.approx(velocity, rel=1e-6, abs=1e-8)
        assert setpoint.acceleration == pytest.approx(acceleration, rel=1e-5, abs=1e-7)
        assert yaw_of(setpoint.rotation) == pytest.approx(t / 5.0)
        assert setpoint.angular_velocity == pytest.approx([0.0, 0.0, 0.2])


def test_sample_setpoint_clamps_outside_segment():
    segment = fit_poly9([0.0, 0.0, 1.0], [1.0, 1.0, 1.0], 2.0, yaw_end=0.5)
    before, after = sample_setpoint(segment, -1.0), sample_setpoint(segment, 3.0)
    assert before.position == pytest.approx([0.0, 0.0, 1.0])
    assert after.position == pytest.approx([1.0, 1.0, 1.0])
    for setpoint in (before, after):
        assert np.all(setpoint.velocity == 0.0)
        assert np.all(setpoint.acceleration == 0.0)
        assert np.all(setpoint.angular_velocity == 0.0)
    assert yaw_of(after.rotation) == pytest.approx(0.5)


params_duration_bad = [
    (0.0, "Segment duration must be positive, got 0.0."),
    (-1.0, "Segment duration must be positive, got -1.0."),
]


@pytest.mark.parametrize("duration, msg", params_duration_bad)
def test_fit_poly9_bad(duration, msg):
    with pytest.raises(ValueError, match=re.escape(msg)):
        fit_poly9(np.zeros(3), np.ones(3), duration)


params_segment_duration = [
    (0.0, 1.0),
    (0.02, 1.0),
    (10.0, 20.0),
]


@pytest.mark.parametrize("distance, expected", params_segment_duration)
def test_segment_duration_floor_and_speed_cap(distance, expected):
    assert segment_duration(distance) == pytest.approx(expected)


def test_segment_duration_acceleration_bound():
    x = 1 / np.sqrt(28.0)
    peak = 2520.0 * 2 * x * (0.25 - x**2) ** 3
    assert segment_duration(1.0) == pytest.approx(np.sqrt(peak / 0.25), rel=1e-9)


@pytest.mark.parametrize("distance", [0.5, 1.0, 2.5, 4.0])
def test_peak_acceleration_within_cap(distance):
    duration = segment_duration(distance, max_speed=2.0, max_acceleration=0.25, min_duration=0.1)
    segment = fit_poly9(np.zeros(3), [distance, 0.0, 0.0], duration)
    times = np.linspace(0.0, duration, 4001)
    peak = max(abs(segment.evaluate(t, 2)[0]) for t in times)
    assert peak <= 0.25 * (1 + 1e-9)
    average_speed = distance / duration
    assert average_speed <= 2.0


def test_segment_duration_bad():
    with pytest.raises(ValueError, match="caps must be positive"):
        segment_duration(1.0, max_speed=0.0)


def test_plan_segments_chain_is_c4_continuous():
    waypoints = [
        Waypoint([0.0, 0.0, 0.0], hold=2.0),
        Waypoint([2.0, 0.0, 1.4], yaw=0.3, hold=1.0),
        Waypoint([2.0, 0.0, 0.5], yaw=0.3, action=WaypointAction.GRASP),
        Waypoint([0.0, 2.0, 1.9], yaw=-0.4),
    ]
    schedule = plan_segments(waypoints)
    assert len(schedule) == 3
    assert schedule[0][0] == pytest.approx(2.0)
    assert schedule[1][0] == pytest.approx(2.0 + schedule[0][1].duration + 1.0)
    assert schedule[2][0] == pytest.approx(schedule[1][0] + schedule[1][1].duration)
    for (_, current), (_, following) in zip(schedule[:-1], schedule[1:]):
        assert current.evaluate(current.duration) == pytest.approx(following.evaluate(0.0), abs=1e-9)
        for order in range(1, 5):
            assert current.evaluate(current.duration, order) == pytest.approx(
                following.evaluate(0.0, order), abs=1e-9
            )
        assert current.yaw_end == following.yaw_start


def test_plan_segments_empty():
    assert plan_segments([]) == []
    assert plan_segments([Waypoint([0.0, 0.0, 1.0])]) == []


params_waypoint_bad = [
    ({"position": [0.0, np.nan, 1.0]}, "Waypoint must be finite"),
    ({"position": [0.0, 0.0, 1.0], "hold": -1.0}, "Waypoint hold time must be non-negative, got -1.0."),
]


@pytest.mark.parametrize("inputs, msg", params_waypoint_bad)
def test_waypoint_bad(inputs, msg):
    with pytest.raises(ValueError, match=re.escape(msg)):
        Waypoint(**inputs)
