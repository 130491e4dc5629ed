from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property

import numpy as np

from diffpy.polelift.so3 import hat

STANDARD_GRAVITY = 9.81
N_MAIN = 4
N_AUXILIARY = 4

# reference coefficients, N s^2/rad^2, N m s^2/rad^2 and rad^2/s^2
MAIN_THRUST_COEFFICIENT = 8.0e-5
MAIN_DRAG_COEFFICIENT = 1.6e-6
MAIN_MAX_SQUARED_SPEED = 5.555e5
AUXILIARY_THRUST_COEFFICIENT = 1.1e-6
AUXILIARY_DRAG_COEFFICIENT = 1.1e-8
AUXILIARY_MAX_SQUARED_SPEED = 4.4e6
MIN_SPEED_FRACTION = 0.02


class SpinDirection(Enum):
    CW = -1
    CCW = 1


class PropellerClass(Enum):
    MAIN = "main"
    AUXILIARY = "auxiliary"


@dataclass(frozen=True, eq=False)
class PropellerSpec:
    """
    One propeller of the vehicle.

    Attributes
    ----------
    position numpy.ndarray
        the rotor hub in the body frame, m
    axis numpy.ndarray
        the unit thrust direction in the body frame
    thrust_coefficient float
        c_f in N s^2/rad^2
    drag_coefficient float
        c_M in N m s^2/rad^2, the sign of the reaction torque follows spin
    spin SpinDirection
    w_min, w_max float
        the squared-speed bounds in rad^2/s^2
    kind PropellerClass

    """

    position: np.ndarray
    axis: np.ndarray
    thrust_coefficient: float
    drag_coefficient: float
    spin: SpinDirection
    w_min: float
    w_max: float
    kind: PropellerClass

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "axis", np.asarray(self.axis, dtype=float))
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-12:
            raise ValueError(f"Propeller axis {self.axis} is not a unit vector. Please normalize it.")
        if self.thrust_coefficient <= 0:
            raise ValueError(
                f"Thrust coefficient must be positive, got {self.thrust_coefficient}. "
                f"Please rerun specifying a positive thrust coefficient."
            )
        if not 0 <= self.w_min < self.w_max:
            raise ValueError(
                f"Squared-speed bounds must satisfy 0 <= w_min < w_max, got [{self.w_min}, {self.w_max}]."
            )

    def force(self, w):
        return self.thrust_coefficient * w * self.axis

    def torque(self, w):
        reaction = self.spin.value * self.drag_coefficient * w * self.axis
        return np.cross(self.position, self.force(w)) + reaction


@dataclass(frozen=True, eq=False)
class VehicleParams:
    """
    Rigid-body parameters of the vehicle, about its geometric center and in body axes.

    the propellers are ordered with the 4 main propellers first and the 4 auxiliaries after them, which is the
    column order of the allocation matrix and of the allocation weights
    """

    mass: float
    inertia: np.ndarray
    com_offset: np.ndarray
    propellers: tuple
    gravity: float = STANDARD_GRAVITY

    def __post_init__(self):
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float))
        object.__setattr__(self, "com_offset", np.asarray(self.com_offset, dtype=float))
        object.__setattr__(self, "propellers", tuple(self.propellers))
        if self.mass <= 0:
            raise ValueError(f"Vehicle mass must be positive, got {self.mass}.")
        if not np.allclose(self.inertia, self.inertia.T, rtol=0, atol=1e-12):
            raise ValueError("Vehicle inertia must be a symmetric matrix.")
        if np.linalg.eigvalsh(self.inertia).min() <= 0:
            raise ValueError("Vehicle inertia must be positive definite.")
        kinds = [propeller.kind for propeller in self.propellers]
        expected = [PropellerClass.MAIN] * N_MAIN + [PropellerClass.AUXILIARY] * N_AUXILIARY
        if kinds != expected:
            raise ValueError(
                f"Expected {N_MAIN} main propellers followed by {N_AUXILIARY} auxiliary propellers, "
                f"got {[kind.value for kind in kinds]}."
            )

    @property
    def gravity_vector(self):
        return np.array([0.0, 0.0, self.gravity])

    @property
    def w_min(self):
        return np.array([propeller.w_min for propeller in self.propellers])

    @property
    def w_max(self):
        return np.array([propeller.w_max for propeller in self.propellers])

    @property
    def main_mask(self):
        return np.array([propeller.kind is PropellerClass.MAIN for propeller in self.propellers])

    @cached_property
    def allocation_matrix(self):
        return build_allocation_matrix(self)


@dataclass(frozen=True, eq=False)
class PayloadSpec:
    """
    A pole held by the gripper.

    Attributes
    ----------
    mass float
        kg
    inertia numpy.ndarray
        about the pole's own center of mass, axes aligned with the body, kg m^2
    offset numpy.ndarray
        body-frame vector from the geometric center to the pole's center of mass, m
    length float
        m
    radius float
        m

    """

    mass: float
    inertia: np.ndarray
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    length: float = 1.0
    radius: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "inertia", np.asarray(self.inertia, dtype=float))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        if self.mass < 0:
            raise ValueError(f"Payload mass must be non-negative, got {self.mass}.")
        if self.length <= 0 or self.radius <= 0:
            raise ValueError(
                f"Payload length and radius must be positive, got length={self.length}, radius={self.radius}."
            )
        if not np.allclose(self.inertia, self.inertia.T, rtol=0, atol=1e-12):
            raise ValueError("Payload inertia must be a symmetric matrix.")
        if np.linalg.eigvalsh(self.inertia).min() < -1e-12:
            raise ValueError("Payload inertia must be positive semi-definite.")

    @classmethod
    def tube(cls, mass, length, radius, offset=(0.0, 0.0, 0.0)):
        return cls(mass, tube_inertia(mass, length, radius), np.asarray(offset, dtype=float), length, radius)


def build_allocation_matrix(params):
    """
    Build the 6x8 allocation matrix mapping squared rotor speeds to the body wrench.

    Parameters
    ----------
    params VehicleParams
        the vehicle parameters

    Returns
    -------
    the numpy array A_b, rows (f_x, f_y, f_z, tau_x, tau_y, tau_z)

    column i stacks beta_i = c_f xi and gamma_i = c_f r x xi + s c_M xi where s is +1 for CCW spin

    """
    columns = []
    for propeller in params.propellers:
        columns.append(np.concatenate([propeller.force(1.0), propeller.torque(1.0)]))
    return np.column_stack(columns)


def tube_inertia(mass, length, radius):
    """
    Inertia of a thin-walled tube about its center of mass, axis along z.

    Parameters
    ----------
    mass float
        kg
    length float
        m
    radius float
        m

    Returns
    -------
    the diagonal 3x3 inertia matrix in kg m^2

    """
    transverse = mass * (radius**2 / 2.0 + length**2 / 12.0)
    return np.diag([transverse, transverse, mass * radius**2])


def compose_payload(params, load):
    """
    Rigidly attach a payload to the vehicle with the parallel axis theorem.

    Parameters
    ----------
    params VehicleParams
        the vehicle parameters
    load PayloadSpec
        the payload to attach

    Returns
    -------
    new VehicleParams with the composite mass, inertia about the geometric center and CoM offset

    """
    d_hat = hat(load.offset)
    mass = params.mass + load.mass
    inertia = params.inertia + load.inertia - load.mass * d_hat @ d_hat
    com_offset = (params.mass * params.com_offset + load.mass * load.offset) / mass
    return replace(params, mass=mass, inertia=inertia, com_offset=com_offset)


def remove_payload(params, load):
    """Exact inverse of compose_payload."""
    d_hat = hat(load.offset)
    mass = params.mass - load.mass
    if mass <= 0:
        raise ValueError(f"Cannot remove a {load.mass} kg payload from a {params.mass} kg vehicle.")
    inertia = params.inertia - load.inertia + load.mass * d_hat @ d_hat
    com_offset = (params.mass * params.com_offset - load.mass * load.offset) / mass
    return replace(params, mass=mass, inertia=inertia, com_offset=com_offset)


def actuation_envelope(allocation, w_max, main_mask):
    """
    Largest collinear hover thrust: the main propellers at w_max, projected on body z.

    Parameters
    ----------
    allocation numpy.ndarray
        the 6x8 allocation matrix
    w_max array_like
        the upper squared-speed bounds
    main_mask array_like of bool
        True for main propeller columns

    Returns
    -------
    the thrust in N

    """
    main_mask = np.asarray(main_mask, dtype=bool)
    return float(np.asarray(allocation)[2, main_mask] @ np.asarray(w_max, dtype=float)[main_mask])


def reference_propellers(
    main_radius=0.45,
    auxiliary_radius=0.30,
    auxiliary_tilt=0.0,
    main_thrust_coefficient=MAIN_THRUST_COEFFICIENT,
    main_drag_coefficient=MAIN_DRAG_COEFFICIENT,
    main_max_squared_speed=MAIN_MAX_SQUARED_SPEED,
    auxiliary_thrust_coefficient=AUXILIARY_THRUST_COEFFICIENT,
    auxiliary_drag_coefficient=AUXILIARY_DRAG_COEFFICIENT,
    auxiliary_max_squared_speed=AUXILIARY_MAX_SQUARED_SPEED,
    min_speed_fraction=MIN_SPEED_FRACTION,
):
    """
    The reference rotor layout.

    the mains sit in an X at main_radius with +z axes and alternating spin; the auxiliaries sit on the body
    axes +x, +y, -x, -y at auxiliary_radius with thrust pointing radially inward, tilted up by auxiliary_tilt
    (rad). Opposite auxiliaries share a spin direction so their reaction torques cancel at equal speed.

    Returns
    -------
    a tuple of 8 PropellerSpec, mains first

    """
    propellers = []
    main_spins = [SpinDirection.CCW, SpinDirection.CW, SpinDirection.CCW, SpinDirection.CW]
    for index, spin in enumerate(main_spins):
        angle = np.pi / 4 + index * np.pi / 2
        propellers.append(
            PropellerSpec(
                position=main_radius * np.array([np.cos(angle), np.sin(angle), 0.0]),
                axis=np.array([0.0, 0.0, 1.0]),
                thrust_coefficient=main_thrust_coefficient,
                drag_coefficient=main_drag_coefficient,
                spin=spin,
                w_min=min_speed_fraction * main_max_squared_speed,
                w_max=main_max_squared_speed,
                kind=PropellerClass.MAIN,
            )
        )
    auxiliary_spins = [SpinDirection.CW, SpinDirection.CCW, SpinDirection.CW, SpinDirection.CCW]
    for index, spin in enumerate(auxiliary_spins):
        angle = index * np.pi / 2
        radial = np.array([np.cos(angle), np.sin(angle), 0.0])
        axis = -np.cos(auxiliary_tilt) * radial + np.array([0.0, 0.0, np.sin(auxiliary_tilt)])
        propellers.append(
            PropellerSpec(
                position=auxiliary_radius * radial,
                axis=axis / np.linalg.norm(axis),
                thrust_coefficient=auxiliary_thrust_coefficient,
                drag_coefficient=auxiliary_drag_coefficient,
                spin=spin,
                w_min=min_speed_fraction * auxiliary_max_squared_speed,
                w_max=auxiliary_max_squared_speed,
                kind=PropellerClass.AUXILIARY,
            )
        )
    return tuple(propellers)


def reference_vehicle(**propeller_options):
    return VehicleParams(
        mass=8.26,
        inertia=np.diag([0.45, 0.45, 0.80]),
        com_offset=np.array([0.0, 0.0, -0.02]),
        propellers=reference_propellers(**propeller_options),
    )
