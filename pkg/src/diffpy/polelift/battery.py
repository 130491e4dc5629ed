import logging
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

logger = logging.getLogger(__name__)

VOLTAGE_MAP_DEGREE = 3
N_COEFFICIENTS = (VOLTAGE_MAP_DEGREE + 1) ** 2
DSHOT_BITS = 11


@dataclass(frozen=True)
class BatteryState:
    """
    Linear voltage sag of the flight battery at hover draw.

    Attributes
    ----------
    nominal_voltage float
        V_nom, the voltage the motor speed constants refer to, V
    initial_voltage float
        voltage of the charged pack, V
    final_voltage float
        voltage reached after discharge_time, kept afterwards, V
    discharge_time float
        s

    """

    nominal_voltage: float = 24.0
    initial_voltage: float = 25.2
    final_voltage: float = 21.0
    discharge_time: float = 600.0

    def __post_init__(self):
        low, high = 0.8 * self.nominal_voltage, 1.05 * self.nominal_voltage
        for name in ("initial_voltage", "final_voltage"):
            voltage = getattr(self, name)
            if not low < voltage <= high:
                raise ValueError(
                    f"Battery {name.replace('_', ' ')} {voltage} V lies outside the valid band "
                    f"({low:.2f}, {high:.2f}] V for a nominal voltage of {self.nominal_voltage} V."
                )
        if self.final_voltage > self.initial_voltage:
            raise ValueError("Battery final voltage must not exceed the initial voltage.")
        if self.discharge_time <= 0:
            raise ValueError(f"Battery discharge time must be positive, got {self.discharge_time}.")

    @classmethod
    def constant(cls, voltage, nominal_voltage=24.0):
        return cls(nominal_voltage, voltage, voltage, 1.0)

    @property
    def slope(self):
        """Discharge rate in V/s."""
        return (self.initial_voltage - self.final_voltage) / self.discharge_time

    def voltage_at(self, t):
        return max(self.final_voltage, self.initial_voltage - self.slope * t)


@dataclass(frozen=True, eq=False)
class VoltageMap:
    """
    Bivariate cubic mapping (desired speed, voltage) to a motor command fraction.

    Attributes
    ----------
    coefficients numpy.ndarray
        4x4, coefficients[i, j] multiplies x^i v^j with x = speed / speed_scale and v = voltage / nominal_voltage
    speed_scale float
        rad/s
    nominal_voltage float
        V
    max_residual float
        the largest absolute command residual on the training samples

    """

    coefficients: np.ndarray
    speed_scale: float
    nominal_voltage: float
    max_residual: float

    def __call__(self, speed, voltage):
        x = np.asarray(speed, dtype=float) / self.speed_scale
        v = np.asarray(voltage, dtype=float) / self.nominal_voltage
        x, v = np.broadcast_arrays(x, v)
        return P.polyval2d(x, v, self.coefficients)


def fit_voltage_map(samples, speed_scale, nominal_voltage):
    """
    Least-squares fit of a degree-3 voltage map.

    Parameters
    ----------
    samples array_like
        Nx3 rows of (speed in rad/s, battery voltage in V, command fraction)
    speed_scale float
        the speed normalization, usually the top speed of the motor class
    nominal_voltage float
        the voltage normalization

    Returns
    -------
    a VoltageMap

    we raise a ValueError when fewer than 16 samples are given or when the samples do not determine the 16
    coefficients (rank-deficient design matrix, e.g. a single voltage level)

    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.ndim != 2 or samples.shape[1] != 3:
        raise ValueError(
            f"Voltage samples must have three columns (speed, voltage, command), got {samples.shape}."
        )
    if samples.shape[0] < N_COEFFICIENTS:
        raise ValueError(
            f"At least {N_COEFFICIENTS} voltage samples are needed for a degree-{VOLTAGE_MAP_DEGREE} fit, "
            f"got {samples.shape[0]}. Please rerun with more samples."
        )
    x = samples[:, 0] / speed_scale
    v = samples[:, 1] / nominal_voltage
    design = P.polyvander2d(x, v, [VOLTAGE_MAP_DEGREE, VOLTAGE_MAP_DEGREE])
    rank = np.linalg.matrix_rank(design)
    if rank < N_COEFFICIENTS:
        raise ValueError(
            f"Voltage samples give a rank-deficient design matrix (rank {rank} < {N_COEFFICIENTS}). "
            f"Please rerun with samples spanning both the speed and the voltage range."
        )
    coefficients, *_ = np.linalg.lstsq(design, samples[:, 2], rcond=None)
    max_residual = float(np.max(np.abs(design @ coefficients - samples[:, 2])))
    logger.debug("voltage map fitted on %d samples, max residual %.3e", samples.shape[0], max_residual)
    return VoltageMap(
        coefficients.reshape(VOLTAGE_MAP_DEGREE + 1, VOLTAGE_MAP_DEGREE + 1),
        speed_scale,
        nominal_voltage,
        max_residual,
    )


def apply_voltage_compensation(voltage_map, w_des, voltage):
    """
    Motor command fraction that achieves the desired squared speed at the given battery voltage.

    Parameters
    ----------
    voltage_map VoltageMap
        the fitted map
    w_des float or array_like
        desired squared speeds, rad^2/s^2
    voltage float or array_like
        the present battery voltage, V, broadcast against w_des

    Returns
    -------
    the command fractions in [0, 1], zero where w_des is zero

    """
    w_des = np.asarray(w_des, dtype=float)
    speed = np.sqrt(np.maximum(w_des, 0.0))
    command = np.where(w_des > 0.0, voltage_map(speed, voltage), 0.0)
    clipped = np.clip(command, 0.0, 1.0)
    if np.any(clipped != command):
        logger.warning("voltage-compensated command clamped to [0, 1] at %.2f V", float(np.min(voltage)))
    return clipped


def nominal_command(w_des, top_speed):
    """Uncompensated command fraction sqrt(w) / top speed."""
    return np.clip(np.sqrt(np.maximum(np.asarray(w_des, dtype=float), 0.0)) / top_speed, 0.0, 1.0)


def quantize_command(command, bits=DSHOT_BITS):
    levels = 2**bits - 1
    return np.round(np.asarray(command, dtype=float) * levels) / levels


def achieved_squared_speed(command, top_speed, voltage, nominal_voltage):
    """Squared rotor speed the motor reaches for a command fraction, proportional to the supply voltage."""
    return (np.asarray(command, dtype=float) * top_speed * voltage / nominal_voltage) ** 2


def synthetic_voltage_samples(top_speed, nominal_voltage, voltages, commands=None):
    """
    Generate (speed, voltage, command) samples from the voltage-proportional motor model.

    Parameters
    ----------
    top_speed float
        speed at full command and nominal voltage, rad/s
    nominal_voltage float
        V
    voltages array_like
        the voltage levels to sample, V
    commands array_like
        the command fractions to sample, defaults to 20 levels in [0.05, 1]

    Returns
    -------
    the Nx3 numpy array of samples

    """
    commands = np.linspace(0.05, 1.0, 20) if commands is None else np.asarray(commands, dtype=float)
    command_grid, voltage_grid = np.meshgrid(commands, np.asarray(voltages, dtype=float), indexing="ij")
    speed = command_grid * top_speed * voltage_grid / nominal_voltage
    return np.column_stack([speed.ravel(), voltage_grid.ravel(), command_grid.ravel()])


def nominal_top_speed(samples, nominal_voltage):
    """
    Estimate the full-command speed at nominal voltage from (speed, voltage, command) samples.

    rows with a zero command or voltage carry no information and are skipped, the estimate is rounded to
    1e-6 rad/s
    """
    samples = np.asarray(samples, dtype=float)
    speed, voltage, command = samples[:, 0], samples[:, 1], samples[:, 2]
    usable = (command > 0.0) & (voltage > 0.0)
    if not np.any(usable):
        raise ValueError("Voltage samples need at least one row with a positive command and voltage.")
    estimates = speed[usable] * nominal_voltage / (voltage[usable] * command[usable])
    return round(float(np.median(estimates)), 6)


@dataclass(frozen=True, eq=False)
class MotorDriver:
    """
    The command chain from desired squared speeds to the squared speeds the motors settle at.

    Attributes
    ----------
    top_speed numpy.ndarray
        per rotor speed at full command and nominal voltage, rad/s
    nominal_voltage float
        V
    voltage_maps tuple of VoltageMap or None
        one map per rotor, None disables voltage compensation
    quantization_bits int or None
        command resolution, None keeps the command continuous

    """

    top_speed: np.ndarray
    nominal_voltage: float
    voltage_maps: tuple = None
    quantization_bits: int = None

    @classmethod
    def for_battery(cls, top_speed, battery, compensate=True, quantization_bits=None):
        top_speed = np.asarray(top_speed, dtype=float)
        maps = None
        if compensate:
            voltages = np.linspace(battery.final_voltage, battery.initial_voltage, 8)
            if battery.final_voltage == battery.initial_voltage:
                voltages = np.linspace(0.85, 1.05, 8) * battery.nominal_voltage
            fitted = {}
            for speed in np.unique(top_speed):
                samples = synthetic_voltage_samples(speed, battery.nominal_voltage, voltages)
                fitted[speed] = fit_voltage_map(samples, speed, battery.nominal_voltage)
            maps = tuple(fitted[speed] for speed in top_speed)
        return cls(top_speed, battery.nominal_voltage, maps, quantization_bits)

    def command(self, w_des, voltage):
        w_des = np.asarray(w_des, dtype=float)
        if self.voltage_maps is None:
            command = nominal_command(w_des, self.top_speed)
        else:
            command = np.array(
                [apply_voltage_compensation(vmap, w, voltage) for vmap, w in zip(self.voltage_maps, w_des)]
            )
        if self.quantization_bits is not None:
            command = quantize_command(command, self.quantization_bits)
        return command

    def achieved(self, command, voltage):
        return achieved_squared_speed(command, self.top_speed, voltage, self.nominal_voltage)
