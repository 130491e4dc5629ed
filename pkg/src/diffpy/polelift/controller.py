import logging
from dataclasses import dataclass, field, replace

import numpy as np

from diffpy.polelift.so3 import rot_z, vee

logger = logging.getLogger(__name__)

INTEGRAL_LIMIT = 1.0


@dataclass(frozen=True)
class ControlGains:
    """
    Gains of the full-pose geometric controller.

    Attributes
    ----------
    k_p float
        position gain, 1/s^2
    k_v float
        velocity gain, 1/s
    k_i float
        integral gain, 1/s^3
    k_R float
        attitude gain, 1/s^2
    k_omega float
        angular velocity gain, 1/s

    """

    k_p: float = 6.0
    k_v: float = 4.5
    k_i: float = 0.6
    k_R: float = 12.0
    k_omega: float = 4.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"Controller gain {name} must be positive, got {value}.")

    def scaled(self, mass_ratio):
        """The loaded gain set: k_p and k_v multiplied by the loaded-to-unloaded mass ratio."""
        return replace(self, k_p=self.k_p * mass_ratio, k_v=self.k_v * mass_ratio)


@dataclass
class ControllerState:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))
    integral_frozen: bool = False


@dataclass(frozen=True, eq=False)
class Setpoint:
    """
    Desired pose and its derivatives, world frame unless noted.

    Attributes
    ----------
    position numpy.ndarray
        m
    velocity numpy.ndarray
        m/s
    acceleration numpy.ndarray
        m/s^2
    rotation numpy.ndarray
        R_wb,des, always flat, a rotation about the world z-axis
    angular_velocity numpy.ndarray
        omega_b,des in the desired body frame, rad/s

    """

    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def hover(cls, position, yaw=0.0):
        return cls(position=np.asarray(position, dtype=float), rotation=rot_z(yaw))


@dataclass(frozen=True, eq=False)
class ControlErrors:
    position: np.ndarray
    velocity: np.ndarray
    rotation: np.ndarray
    angular_velocity: np.ndarray


def compute_errors(state, setpoint):
    """
    Pose and twist errors of the geometric controller.

    Parameters
    ----------
    state RigidState
        the measured state
    setpoint Setpoint
        the desired state

    Returns
    -------
    ControlErrors with e_p = p - p_des, e_v = R v_b - v_des, e_R = 1/2 (R_des^T R - R^T R_des)^vee and
    e_omega = omega_b - R^T R_des omega_des

    """
    R = state.rotation
    R_des = setpoint.rotation
    return ControlErrors(
        position=state.position - setpoint.position,
        velocity=R @ state.velocity - setpoint.velocity,
        rotation=0.5 * vee(R_des.T @ R - R.T @ R_des),
        angular_velocity=state.angular_velocity - R.T @ R_des @ setpoint.angular_velocity,
    )


def compute_wrench(errors, state, setpoint, params, ctl_state, gains):
    """
    Desired body wrench: PID action on the pose errors plus feedforward and dynamic cancellation.

    Parameters
    ----------
    errors ControlErrors
        from compute_errors
    state RigidState
        the measured state
    setpoint Setpoint
        the desired state
    params VehicleParams
        the model the controller believes in, loaded or unloaded
    ctl_state ControllerState
        holds the integral of the position error
    gains ControlGains
        the active gain set

    Returns
    -------
    the 6-vector (f_b,des, tau_b,des)

    f = m (R^T (-k_p e_p - k_v e_v - k_i e_i + a_des + g_w) + omega x v_b) and
    tau = J (-k_R e_R - k_omega e_omega) + omega x J omega + x_com x f

    """
    R = state.rotation
    omega = state.angular_velocity
    J = params.inertia
    acceleration = (
        -gains.k_p * errors.position
        - gains.k_v * errors.velocity
        - gains.k_i * ctl_state.integral
        + setpoint.acceleration
        + params.gravity_vector
    )
    force = params.mass * (R.T @ acceleration + np.cross(omega, state.velocity))
    torque = (
        J @ (-gains.k_R * errors.rotation - gains.k_omega * errors.angular_velocity)
        + np.cross(omega, J @ omega)
        + np.cross(params.com_offset, force)
    )
    return np.concatenate([force, torque])


def integral_update(ctl_state, position_error, dt):
    """
    Accumulate the position error, saturated componentwise at +-1 m s; frozen states are returned unchanged.
    """
    if dt <= 0:
        raise ValueError(f"Integration step must be positive, got dt={dt}.")
    if ctl_state.integral_frozen:
        return ctl_state
    integral = np.clip(ctl_state.integral + position_error * dt, -INTEGRAL_LIMIT, INTEGRAL_LIMIT)
    return replace(ctl_state, integral=integral)


class GeometricController:
    """
    The flight controller of the vehicle: model, active gains and integral state in one object.

    Parameters
    ----------
    params VehicleParams
        the model used for feedforward and cancellation
    gains ControlGains
        the active gain set

    """

    def __init__(self, params, gains=None):
        self.params = params
        self.gains = ControlGains() if gains is None else gains
        self.state = ControllerState()

    def switch_model(self, params, gains):
        logger.info("controller model switched to %.3f kg", params.mass)
        self.params = params
        self.gains = gains

    def freeze_integral(self, frozen):
        self.state = replace(self.state, integral_frozen=bool(frozen))

    def update(self, measured, setpoint, dt):
        errors = compute_errors(measured, setpoint)
        self.state = integral_update(self.state, errors.position, dt)
        return compute_wrench(errors, measured, setpoint, self.params, self.state, self.gains)
