import re
from dataclasses import replace

import numpy as np
import pytest

from diffpy.polelift.dynamics import (
    MotorState,
    RigidState,
    SimulationDivergenceError,
    measure_state,
    motor_lag_step,
    newton_euler_derivative,
    rk4_step,
)
from diffpy.polelift.so3 import is_rotation, rotation_exp


def _idle_motor(params):
    n = len(params.propellers)
    return MotorState(np.zeros(n), np.zeros(n), np.full(n, 0.03), params.w_min, params.w_max)


def _torque_free(params, inertia=None):
    inertia = params.inertia if inertia is None else inertia
    return replace(params, inertia=inertia, com_offset=np.zeros(3), gravity=0.0)


def test_hover_derivative_is_zero(reference):
    force = np.array([0.0, 0.0, reference.mass * reference.gravity])
    derivative = newton_euler_derivative(RigidState(), reference, force, np.zeros(3))
    assert derivative.velocity == pytest.approx(np.zeros(3), abs=1e-14)
    assert derivative.angular_velocity == pytest.approx(np.zeros(3), abs=1e-14)
    assert derivative.position == pytest.approx(np.zeros(3), abs=0)
    assert derivative.rotation == pytest.approx(np.zeros((3, 3)), abs=0)


def test_upward_force_acceleration(reference):
    params = replace(reference, com_offset=np.zeros(3))
    derivative = newton_euler_derivative(RigidState(), params, np.array([0.0, 0.0, 90.0]), np.zeros(3))
    assert derivative.velocity == pytest.approx([0.0, 0.0, 90.0 / 8.26 - 9.81])
    assert derivative.angular_velocity == pytest.approx(np.zeros(3), abs=1e-15)


def test_com_offset_couples_force_into_torque(reference):
    force = np.array([5.0, 0.0, 0.0])
    derivative = newton_euler_derivative(RigidState(), reference, force, np.zeros(3))
    expected = np.linalg.solve(reference.inertia, -np.cross(reference.com_offset, force))
    assert derivative.angular_velocity == pytest.approx(expected)
    assert abs(derivative.angular_velocity[1]) > 0


def test_free_fall(reference):
    state = RigidState()
    motor = _idle_motor(reference)
    for k in range(1000):
        state = rk4_step(state, motor, reference, 0.001, t=k * 0.001)
    assert state.position[2] == pytest.approx(-4.905, abs=1e-9)
    assert state.velocity == pytest.approx([0.0, 0.0, -9.81], abs=1e-9)
    assert state.rotation == pytest.approx(np.eye(3), abs=1e-12)


def test_pseudo_inverse_equilibrium(reference):
    A = reference.allocation_matrix
    hover_wrench = np.array([0.0, 0.0, reference.mass * reference.gravity, 0.0, 0.0, 0.0])
    w = np.linalg.pinv(A) @ hover_wrench
    wrench = A @ w
    derivative = newton_euler_derivative(RigidState(), reference, wrench[:3], wrench[3:])
    assert np.abs(derivative.velocity).max() < 1e-12
    assert np.abs(derivative.angular_velocity).max() < 1e-12


def test_momentum_conservation_without_gravity(reference):
    params = _torque_free(reference)
    state = RigidState(
        position=np.zeros(3),
        rotation=rotation_exp([0.1, 0.2, -0.3]),
        velocity=np.array([0.4, -0.2, 0.1]),
        angular_velocity=np.array([0.5, -0.3, 1.0]),
    )
    motor = _idle_motor(params)

    def momenta(s):
        return params.mass * s.rotation @ s.velocity, s.rotation @ params.inertia @ s.angular_velocity

    linear0, angular0 = momenta(state)
    for k in range(1000):
        state = rk4_step(state, motor, params, 0.002, t=k * 0.002)
    linear, angular = momenta(state)
    assert linear == pytest.approx(linear0, rel=1e-6, abs=1e-9)
    assert angular == pytest.approx(angular0, rel=1e-6, abs=1e-9)


def _integrate(params, state, dt, duration):
    motor = _idle_motor(params)
    for k in range(int(round(duration / dt))):
        state = rk4_step(state, motor, params, dt, t=k * dt)
    return state


def _state_error(state, reference_state):
    return np.linalg.norm(state.angular_velocity - reference_state.angular_velocity) + np.linalg.norm(
        state.rotation - reference_state.rotation
    )


def test_rk4_convergence_order(reference):
    params = _torque_free(reference, np.diag([0.3, 0.45, 0.8]))
    initial = RigidState(angular_velocity=np.array([1.0, 0.5, 2.0]))
    exact = _integrate(params, initial, 1e-4, 1.0)
    errors = [_state_error(_integrate(params, initial, dt, 1.0), exact) for dt in (0.04, 0.02, 0.01)]
    orders = np.log2(np.array(errors[:-1]) / np.array(errors[1:]))
    assert np.all(orders >= 3.8)


def test_rotation_stays_orthonormal(reference):
    params = _torque_free(reference, np.diag([0.3, 0.45, 0.8]))
    state = _integrate(params, RigidState(angular_velocity=np.array([3.0, -2.0, 5.0])), 0.002, 10.0)
    assert is_rotation(state.rotation)
    assert np.abs(state.rotation.T @ state.rotation - np.eye(3)).max() < 1e-12
    assert np.linalg.det(state.rotation) == pytest.approx(1.0, abs=1e-12)


def test_finite_difference_derivative(reference):
    rng = np.random.default_rng(4)
    state = RigidState(
        position=rng.normal(size=3),
        rotation=rotation_exp(rng.normal(size=3)),
        velocity=rng.normal(size=3),
        angular_velocity=rng.normal(size=3),
    )
    w = rng.uniform(reference.w_min, reference.w_max / 2)
    motor = MotorState.steady(w, reference, 0.03)
    wrench = reference.allocation_matrix @ motor.w_act
    derivative = newton_euler_derivative(state, reference, wrench[:3], wrench[3:])
    h = 1e-6
    stepped = rk4_step(state, motor, reference, h)
    assert (stepped.position - state.position) / h == pytest.approx(derivative.position, rel=1e-4, abs=1e-4)
    assert (stepped.velocity - state.velocity) / h == pytest.approx(derivative.velocity, rel=1e-4, abs=1e-4)
    assert (stepped.angular_velocity - state.angular_velocity) / h == pytest.approx(
        derivative.angular_velocity, rel=1e-4, abs=1e-4
    )
    assert (stepped.rotation - state.rotation) / h == pytest.approx(derivative.rotation, rel=1e-4, abs=1e-4)


def test_divergence_error_reports_time(reference):
    state = RigidState(velocity=np.array([2e6, 0.0, 0.0]))
    with pytest.raises(SimulationDivergenceError, match="exceeds") as excinfo:
        rk4_step(state, _idle_motor(reference), reference, 0.01, t=5.0)
    assert excinfo.value.time == pytest.approx(5.01)


def test_divergence_on_non_finite_state(reference):
    state = RigidState(angular_velocity=np.array([np.nan, 0.0, 0.0]))
    with pytest.raises(SimulationDivergenceError, match="is not finite"):
        rk4_step(state, _idle_motor(reference), reference, 0.01)


params_step_bad = [
    (0.0, "Step size must be positive, got dt=0.0."),
    (-0.001, "Step size must be positive, got dt=-0.001."),
]


@pytest.mark.parametrize("dt, msg", params_step_bad)
def test_step_size_bad(dt, msg, reference):
    with pytest.raises(ValueError, match=re.escape(msg)):
        rk4_step(RigidState(), _idle_motor(reference), reference, dt)
    with pytest.raises(ValueError, match=re.escape(msg)):
        motor_lag_step(_idle_motor(reference), dt)


def test_motor_lag_time_constant(reference):
    tau = 0.03
    start, target = 200.0, 600.0
    n = len(reference.propellers)
    motor = MotorState(
        np.full(n, start**2), np.full(n, target**2), np.full(n, tau), np.zeros(n), np.full(n, 1e6)
    )
    for _ in range(100):
        motor = motor_lag_step(motor, tau / 100)
    remaining = (target - np.sqrt(motor.w_act)) / (target - start)
    assert remaining == pytest.approx(np.full(n, np.exp(-1.0)), abs=0.005)


def test_motor_lag_clamps_to_bounds(reference):
    motor = MotorState.steady(reference.w_min, reference, 0.03).commanded(2.0 * reference.w_max)
    for _ in range(500):
        motor = motor_lag_step(motor, 0.01)
        assert np.all(motor.w_act <= reference.w_max)
    assert motor.w_act == pytest.approx(reference.w_max)


def test_motor_state_steady_clips(reference):
    motor = MotorState.steady(np.full(8, 1e9), reference, 0.03)
    assert motor.w_act == pytest.approx(reference.w_max)
    assert motor.time_constant == pytest.approx(np.full(8, 0.03))


def test_measure_state_noise():
    rng = np.random.default_rng(0)
    state = RigidState(position=np.array([1.0, 2.0, 3.0]), velocity=np.array([0.1, 0.0, 0.0]))
    assert measure_state(state, rng) is state
    samples = [measure_state(state, rng, 0.01, 0.005) for _ in range(2000)]
    offsets = np.array([sample.position - state.position for sample in samples])
    assert offsets.std(axis=0) == pytest.approx(np.full(3, 0.01), rel=0.1)
    assert np.abs(offsets.mean(axis=0)).max() < 1e-3
    assert all(is_rotation(sample.rotation) for sample in samples)
    assert all(np.array_equal(sample.velocity, state.velocity) for sample in samples)
