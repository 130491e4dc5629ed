from dataclasses import dataclass, field, replace

import numpy as np

from diffpy.polelift.so3 import hat, is_rotation, orthonormalize, rotation_exp

DIVERGENCE_LIMIT = 1e6


class SimulationDivergenceError(RuntimeError):
    """Raised when the integrated state leaves the physically meaningful range."""

    def __init__(self, time, message):
        super().__init__(f"Simulation diverged at t={time:.3f} s: {message}")
        self.time = time


@dataclass(frozen=True, eq=False)
class RigidState:
    """
    Pose and twist of the body frame.

    Attributes
    ----------
    position numpy.ndarray
        p_w, position of the geometric center in the world frame, m
    rotation numpy.ndarray
        R_wb, rotation from body to world
    velocity numpy.ndarray
        v_b, linear velocity in the body frame, m/s
    angular_velocity numpy.ndarray
        omega_b, angular velocity in the body frame, rad/s

    """

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def at_rest(cls, position=(0.0, 0.0, 0.0), rotation=None):
        return cls(
            position=np.asarray(position, dtype=float),
            rotation=np.eye(3) if rotation is None else np.asarray(rotation, dtype=float),
        )

    @property
    def world_velocity(self):
        return self.rotation @ self.velocity

    def is_valid(self):
        vectors = np.concatenate([self.position, self.velocity, self.angular_velocity])
        return bool(np.all(np.isfinite(vectors))) and is_rotation(self.rotation)


@dataclass(frozen=True, eq=False)
class MotorState:
    """
    Rotor squared speeds with their bounds and first-order time constants.

    Attributes
    ----------
    w_act numpy.ndarray
        achieved squared speeds, rad^2/s^2
    w_cmd numpy.ndarray
        commanded squared speeds, rad^2/s^2
    time_constant numpy.ndarray
        tau_m per rotor, s
    w_min, w_max numpy.ndarray
        squared-speed bounds

    """

    w_act: np.ndarray
    w_cmd: np.ndarray
    time_constant: np.ndarray
    w_min: np.ndarray
    w_max: np.ndarray

    @classmethod
    def steady(cls, w, params, time_constant):
        w = np.clip(np.asarray(w, dtype=float), params.w_min, params.w_max)
        tau = np.broadcast_to(np.asarray(time_constant, dtype=float), w.shape).copy()
        return cls(w_act=w, w_cmd=w.copy(), time_constant=tau, w_min=params.w_min, w_max=params.w_max)

    def commanded(self, w_cmd):
        return replace(self, w_cmd=np.asarray(w_cmd, dtype=float))


def newton_euler_derivative(state, params, force, torque):
    """
    Time derivative of the rigid-body state under a body wrench.

    Parameters
    ----------
    state RigidState
        the current state
    params VehicleParams
        mass, inertia about the geometric center, CoM offset and gravity
    force numpy.ndarray
        f_b, body-frame force at the geometric center, N
    torque numpy.ndarray
        tau_b, body-frame torque about the geometric center, N m

    Returns
    -------
    a RigidState whose fields hold the derivatives (p_dot, R_dot, v_dot, omega_dot)

    m v_dot = f - omega x (m v) - m R^T g_w and J omega_dot = tau - omega x (J omega) - x_com x f

    """
    R = state.rotation
    v = state.velocity
    omega = state.angular_velocity
    m = params.mass
    J = params.inertia
    v_dot = (force - np.cross(omega, m * v)) / m - R.T @ params.gravity_vector
    omega_dot = np.linalg.solve(J, torque - np.cross(omega, J @ omega) - np.cross(params.com_offset, force))
    return RigidState(position=R @ v, rotation=R @ hat(omega), velocity=v_dot, angular_velocity=omega_dot)


def _advance(state, derivative, h):
    return RigidState(
        position=state.position + h * derivative.position,
        rotation=state.rotation + h * derivative.rotation,
        velocity=state.velocity + h * derivative.velocity,
        angular_velocity=state.angular_velocity + h * derivative.angular_velocity,
    )


def rk4_step(state, motor, params, dt, t=0.0):
    """
    Advance the state by one classical Runge-Kutta step.

    Parameters
    ----------
    state RigidState
        the current state
    motor MotorState
        the wrench A_b w_act is held constant over the step
    params VehicleParams
        the plant parameters
    dt float
        the step size, s
    t float
        the current time, only used in the divergence diagnostic

    Returns
    -------
    the next RigidState with the rotation projected back onto SO(3)

    """
    if dt <= 0:
        raise ValueError(f"Step size must be positive, got dt={dt}.")
    wrench = params.allocation_matrix @ motor.w_act
    force, torque = wrench[:3], wrench[3:]
    k1 = newton_euler_derivative(state, params, force, torque)
    k2 = newton_euler_derivative(_advance(state, k1, dt / 2), params, force, torque)
    k3 = newton_euler_derivative(_advance(state, k2, dt / 2), params, force, torque)
    k4 = newton_euler_derivative(_advance(state, k3, dt), params, force, torque)
    increment = _advance(_advance(_advance(k1, k2, 2.0), k3, 2.0), k4, 1.0)
    stepped = _advance(state, increment, dt / 6)
    _check_divergence(stepped, t + dt)
    return replace(stepped, rotation=orthonormalize(stepped.rotation))


def _check_divergence(state, t):
    for name in ("position", "velocity", "angular_velocity", "rotation"):
        value = getattr(state, name)
        if not np.all(np.isfinite(value)):
            raise SimulationDivergenceError(t, f"{name} is not finite")
        norm = np.linalg.norm(value)
        if norm > DIVERGENCE_LIMIT:
            raise SimulationDivergenceError(t, f"|{name}| = {norm:.3e} exceeds {DIVERGENCE_LIMIT:.0e}")


def motor_lag_step(motor, dt):
    """
    First-order lag of the rotor speeds towards the command.

    Parameters
    ----------
    motor MotorState
        the current motor state
    dt float
        the step size, s

    Returns
    -------
    a new MotorState

    the lag acts on the speed sqrt(w), discretized exactly, and the result is clamped to the bounds

    """
    if dt <= 0:
        raise ValueError(f"Step size must be positive, got dt={dt}.")
    target = np.sqrt(np.clip(motor.w_cmd, motor.w_min, motor.w_max))
    speed = np.sqrt(motor.w_act)
    decay = np.exp(-dt / motor.time_constant)
    speed = target + (speed - target) * decay
    return replace(motor, w_act=np.clip(speed**2, motor.w_min, motor.w_max))


def measure_state(state, rng, sigma_position=0.0, sigma_attitude=0.0):
    """
    Ground truth corrupted by zero-mean Gaussian noise, the way a motion capture system reports it.

    Parameters
    ----------
    state RigidState
        the true state
    rng numpy.random.Generator
        the noise source
    sigma_position float
        standard deviation per position axis, m
    sigma_attitude float
        standard deviation per rotation-vector axis, rad

    Returns
    -------
    the measured RigidState, velocities untouched

    """
    if sigma_position == 0.0 and sigma_attitude == 0.0:
        return state
    position = state.position + rng.normal(0.0, sigma_position, 3)
    rotation = state.rotation @ rotation_exp(rng.normal(0.0, sigma_attitude, 3))
    return replace(state, position=position, rotation=rotation)
