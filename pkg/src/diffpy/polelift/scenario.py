import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from diffpy.polelift.allocation import AllocationWeights
from diffpy.polelift.battery import BatteryState
from diffpy.polelift.controller import ControlGains
from diffpy.polelift.gripper import GripperGeometry, GripperTiming, pole_fits
from diffpy.polelift.mission import MissionSettings, MountSpec, PoleSpec
from diffpy.polelift.vehicle import N_AUXILIARY, N_MAIN, VehicleParams, reference_propellers

REQUIRED = object()
SCENARIO_DIRECTORY = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    """A scenario file violates the schema or a physical invariant."""

    def __init__(self, path, line, message, source=None):
        location = f"{path} (line {line})" if line is not None else path
        if source is not None:
            location = f"{source}: {location}"
        super().__init__(f"{location}: {message}")
        self.key_path = path
        self.line = line
        self.message = message
        self.source = source


def _float(value):
    if isinstance(value, bool):
        raise ValueError(f"expected a number, got {value!r}")
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"expected a number, got {value!r}")
    if not np.isfinite(number):
        raise ValueError(f"expected a finite number, got {value!r}")
    return number


def _int(value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"expected an integer, got {value!r}")
    return value


def _optional_int(value):
    return None if value is None else _int(value)


def _bool(value):
    if not isinstance(value, bool):
        raise ValueError(f"expected true or false, got {value!r}")
    return value


def _str(value):
    if not isinstance(value, str) or not value:
        raise ValueError(f"expected a non-empty string, got {value!r}")
    return value


def _vec3(value):
    if not isinstance(value, list) or len(value) != 3:
        raise ValueError(f"expected a list of 3 numbers, got {value!r}")
    return [_float(item) for item in value]


def _inertia(value):
    """Diagonal [Ixx, Iyy, Izz] or a full 3x3 matrix."""
    if isinstance(value, list) and len(value) == 3 and all(isinstance(row, list) for row in value):
        return [_vec3(row) for row in value]
    diagonal = _vec3(value)
    return [[diagonal[0], 0.0, 0.0], [0.0, diagonal[1], 0.0], [0.0, 0.0, diagonal[2]]]


class _ListOf:
    def __init__(self, schema):
        self.schema = schema


_GAINS = {name: (_float, getattr(ControlGains(), name)) for name in ("k_p", "k_v", "k_i", "k_R", "k_omega")}

SCHEMA = {
    "name": (_str, REQUIRED),
    "seed": (_int, 0),
    "vehicle": {
        "mass": (_float, REQUIRED),
        "inertia": (_inertia, REQUIRED),
        "com_offset": (_vec3, REQUIRED),
        "gravity": (_float, REQUIRED),
        "propellers": {
            "main_radius": (_float, REQUIRED),
            "auxiliary_radius": (_float, REQUIRED),
            "auxiliary_tilt_deg": (_float, REQUIRED),
            "main_thrust_coefficient": (_float, REQUIRED),
            "main_drag_coefficient": (_float, REQUIRED),
            "main_max_squared_speed": (_float, REQUIRED),
            "auxiliary_thrust_coefficient": (_float, REQUIRED),
            "auxiliary_drag_coefficient": (_float, REQUIRED),
            "auxiliary_max_squared_speed": (_float, REQUIRED),
            "min_speed_fraction": (_float, REQUIRED),
        },
    },
    "motors": {
        "main_top_speed": (_float, REQUIRED),
        "auxiliary_top_speed": (_float, REQUIRED),
        "main_time_constant": (_float, 0.03),
        "auxiliary_time_constant": (_float, 0.015),
        "quantization_bits": (_optional_int, None),
    },
    "gripper": {
        "incircle_radius": (_float, REQUIRED),
        "pole_radius_min": (_float, REQUIRED),
        "pole_radius_max": (_float, REQUIRED),
        "fold_angle_deg": (_float, REQUIRED),
        "friction": (_float, REQUIRED),
        "grasp_offset": (_float, REQUIRED),
        "centering_time": (_float, GripperTiming().centering_time),
        "locking_time": (_float, GripperTiming().locking_time),
    },
    "battery": {
        "nominal_voltage": (_float, REQUIRED),
        "initial_voltage": (_float, REQUIRED),
        "final_voltage": (_float, REQUIRED),
        "discharge_time": (_float, REQUIRED),
        "compensation": (_bool, True),
    },
    "controller": {
        "gains": dict(_GAINS),
        "loaded_gains": {name: (_float, None) for name in _GAINS},
    },
    "allocation": {name: (_float, value) for name, value in vars(AllocationWeights()).items()},
    "rates": {
        "physics": (_int, 1000),
        "controller": (_int, 200),
        "planner": (_int, 100),
    },
    "noise": {
        "enabled": (_bool, True),
        "position_sigma": (_float, 0.002),
        "attitude_sigma_deg": (_float, 0.2),
    },
    "mission": {
        "home": (_vec3, REQUIRED),
        "poles": _ListOf(
            {
                "name": (_str, REQUIRED),
                "base": (_vec3, REQUIRED),
                "length": (_float, REQUIRED),
                "mass": (_float, REQUIRED),
                "radius": (_float, REQUIRED),
            }
        ),
        "mount": {
            "position": (_vec3, REQUIRED),
            "acceptance_radius": (_float, REQUIRED),
        },
        "settings": {
            name: ((_int if isinstance(value, int) else _float), value)
            for name, value in vars(MissionSettings()).items()
        },
    },
}


@dataclass(frozen=True)
class Rates:
    physics: int = 1000
    controller: int = 200
    planner: int = 100

    def __post_init__(self):
        if min(self.physics, self.controller, self.planner) <= 0:
            raise ValueError("Loop rates must be positive.")
        if self.physics % self.controller or self.physics % self.planner:
            raise ValueError(
                f"Controller ({self.controller} Hz) and planner ({self.planner} Hz) rates must divide the "
                f"physics rate ({self.physics} Hz)."
            )

    @property
    def physics_dt(self):
        return 1.0 / self.physics

    @property
    def controller_dt(self):
        return 1.0 / self.controller

    @property
    def controller_divisor(self):
        return self.physics // self.controller

    @property
    def planner_divisor(self):
        return self.physics // self.planner


@dataclass(frozen=True)
class NoiseSettings:
    """Measurement noise standard deviations, m and rad."""

    enabled: bool = True
    position_sigma: float = 0.002
    attitude_sigma: float = np.radians(0.2)

    @property
    def sigmas(self):
        return (self.position_sigma, self.attitude_sigma) if self.enabled else (0.0, 0.0)


@dataclass(frozen=True, eq=False)
class MotorSettings:
    top_speed: np.ndarray
    time_constant: np.ndarray
    quantization_bits: int = None


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """
    A fully validated scenario.

    Attributes
    ----------
    resolved dict
        the configuration with every default filled in, the source of config_hash and of the report
    defaults_applied list of str
        dotted key paths that took their default value

    """

    name: str
    seed: int
    vehicle: VehicleParams
    motors: MotorSettings
    gripper: GripperGeometry
    gripper_timing: GripperTiming
    grasp_offset: float
    battery: BatteryState
    compensation: bool
    gains: ControlGains
    loaded_gains: ControlGains
    weights: AllocationWeights
    rates: Rates
    noise: NoiseSettings
    home: np.ndarray
    poles: tuple
    mount: MountSpec
    mission: MissionSettings
    resolved: dict
    defaults_applied: list
    config_hash: str
    source: str


def _key_lines(node, prefix="", lines=None):
    """Map dotted key paths to the 1-based line where the key appears."""
    lines = {} if lines is None else lines
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            path = f"{prefix}.{key_node.value}" if prefix else str(key_node.value)
            lines[path] = key_node.start_mark.line + 1
            _key_lines(value_node, path, lines)
    elif isinstance(node, yaml.SequenceNode):
        for index, item in enumerate(node.value):
            path = f"{prefix}[{index}]"
            lines[path] = item.start_mark.line + 1
            _key_lines(item, path, lines)
    return lines


def _line_of(lines, path):
    while path:
        if path in lines:
            return lines[path]
        path = path.rpartition(".")[0]
    return 1


def _has_required(schema):
    for spec in schema.values():
        if isinstance(spec, (dict, _ListOf)):
            if isinstance(spec, _ListOf) or _has_required(spec):
                return True
        elif spec[1] is REQUIRED:
            return True
    return False


def _resolve(data, schema, prefix, lines, defaults_applied):
    if not isinstance(data, dict):
        raise ScenarioError(prefix or "<document>", _line_of(lines, prefix), "expected a mapping of keys")
    unknown = sorted(set(data) - set(schema))
    if unknown:
        path = f"{prefix}.{unknown[0]}" if prefix else str(unknown[0])
        raise ScenarioError(path, _line_of(lines, path), f"unknown key, expected one of {sorted(schema)}")
    resolved = {}
    for key, spec in schema.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(spec, _ListOf):
            if key not in data:
                raise ScenarioError(path, _line_of(lines, prefix), "missing required key")
            items = data[key]
            if not isinstance(items, list) or not items:
                raise ScenarioError(path, _line_of(lines, path), "expected a non-empty list")
            resolved[key] = [
                _resolve(item, spec.schema, f"{path}[{index}]", lines, defaults_applied)
                for index, item in enumerate(items)
            ]
        elif isinstance(spec, dict):
            if key not in data and _has_required(spec):
                raise ScenarioError(path, _line_of(lines, prefix), "missing required section")
            resolved[key] = _resolve(data.get(key, {}), spec, path, lines, defaults_applied)
        elif key in data:
            convert, _ = spec
            try:
                resolved[key] = convert(data[key])
            except ValueError as error:
                raise ScenarioError(path, _line_of(lines, path), str(error))
        else:
            convert, default = spec
            if default is REQUIRED:
                raise ScenarioError(path, _line_of(lines, prefix), "missing required key")
            resolved[key] = default
            defaults_applied.append(path)
    return resolved


def _build(resolved, lines, source, defaults_applied):
    def guarded(path, factory, *args, **kwargs):
        try:
            return factory(*args, **kwargs)
        except ValueError as error:
            raise ScenarioError(path, _line_of(lines, path), str(error))

    vehicle = resolved["vehicle"]
    propellers = dict(vehicle["propellers"])
    propellers["auxiliary_tilt"] = np.radians(propellers.pop("auxiliary_tilt_deg"))
    params = guarded(
        "vehicle",
        VehicleParams,
        mass=vehicle["mass"],
        inertia=np.array(vehicle["inertia"]),
        com_offset=np.array(vehicle["com_offset"]),
        propellers=guarded("vehicle.propellers", reference_propellers, **propellers),
        gravity=vehicle["gravity"],
    )
    motors = resolved["motors"]
    if motors["main_top_speed"] <= 0 or motors["auxiliary_top_speed"] <= 0:
        raise ScenarioError("motors", _line_of(lines, "motors"), "top speeds must be positive")
    if motors["main_time_constant"] <= 0 or motors["auxiliary_time_constant"] <= 0:
        raise ScenarioError("motors", _line_of(lines, "motors"), "motor time constants must be positive")
    motor_settings = MotorSettings(
        top_speed=np.array([motors["main_top_speed"]] * N_MAIN + [motors["auxiliary_top_speed"]] * N_AUXILIARY),
        time_constant=np.array(
            [motors["main_time_constant"]] * N_MAIN + [motors["auxiliary_time_constant"]] * N_AUXILIARY
        ),
        quantization_bits=motors["quantization_bits"],
    )
    gripper = resolved["gripper"]
    geometry = guarded(
        "gripper",
        GripperGeometry,
        incircle_radius=gripper["incircle_radius"],
        pole_radius_min=gripper["pole_radius_min"],
        pole_radius_max=gripper["pole_radius_max"],
        fold_angle=np.radians(gripper["fold_angle_deg"]),
        friction=gripper["friction"],
    )
    battery = resolved["battery"]
    controller = resolved["controller"]
    loaded = controller["loaded_gains"]
    loaded_gains = None
    if any(value is not None for value in loaded.values()):
        if any(value is None for value in loaded.values()):
            raise ScenarioError(
                "controller.loaded_gains",
                _line_of(lines, "controller.loaded_gains"),
                "give either all loaded gains or none",
            )
        loaded_gains = guarded("controller.loaded_gains", ControlGains, **loaded)
    mission = resolved["mission"]
    poles = []
    for index, pole in enumerate(mission["poles"]):
        path = f"mission.poles[{index}]"
        spec = guarded(
            path, PoleSpec, pole["name"], np.array(pole["base"]), pole["length"], pole["mass"], pole["radius"]
        )
        if not pole_fits(geometry, spec.radius):
            raise ScenarioError(
                f"{path}.radius",
                _line_of(lines, f"{path}.radius"),
                f"pole radius {spec.radius} m is outside the gripper range "
                f"[{geometry.pole_radius_min}, {geometry.pole_radius_max}] m",
            )
        poles.append(spec)
    names = [pole.name for pole in poles]
    if len(set(names)) != len(names):
        raise ScenarioError(
            "mission.poles", _line_of(lines, "mission.poles"), f"pole names must be unique, got {names}"
        )
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return ScenarioConfig(
        name=resolved["name"],
        seed=resolved["seed"],
        vehicle=params,
        motors=motor_settings,
        gripper=geometry,
        gripper_timing=guarded(
            "gripper", GripperTiming, gripper["centering_time"], gripper["locking_time"]
        ),
        grasp_offset=gripper["grasp_offset"],
        battery=guarded(
            "battery",
            BatteryState,
            battery["nominal_voltage"],
            battery["initial_voltage"],
            battery["final_voltage"],
            battery["discharge_time"],
        ),
        compensation=battery["compensation"],
        gains=guarded("controller.gains", ControlGains, **controller["gains"]),
        loaded_gains=loaded_gains,
        weights=guarded("allocation", AllocationWeights, **resolved["allocation"]),
        rates=guarded("rates", Rates, **resolved["rates"]),
        noise=NoiseSettings(
            resolved["noise"]["enabled"],
            resolved["noise"]["position_sigma"],
            float(np.radians(resolved["noise"]["attitude_sigma_deg"])),
        ),
        home=np.array(mission["home"]),
        poles=tuple(poles),
        mount=guarded(
            "mission.mount",
            MountSpec,
            np.array(mission["mount"]["position"]),
            mission["mount"]["acceptance_radius"],
        ),
        mission=guarded("mission.settings", MissionSettings, **mission["settings"]),
        resolved=resolved,
        defaults_applied=defaults_applied,
        config_hash=hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        source=source,
    )


def parse_scenario(text, source="<string>"):
    """
    Validate scenario text.

    Parameters
    ----------
    text str
        YAML document
    source str
        where the text came from, kept in the config

    Returns
    -------
    a ScenarioConfig

    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as error:
        mark = getattr(error, "problem_mark", None)
        raise ScenarioError("<document>", mark.line + 1 if mark else None, f"invalid YAML: {error}")
    lines = _key_lines(root) if root is not None else {}
    defaults_applied = []
    resolved = _resolve(data if data is not None else {}, SCHEMA, "", lines, defaults_applied)
    return _build(resolved, lines, source, defaults_applied)


def load_scenario(path):
    """
    Load and validate a scenario file.

    Parameters
    ----------
    path str or pathlib.Path
        the YAML scenario file

    Returns
    -------
    a ScenarioConfig with all defaults resolved

    we raise a FileNotFoundError for a missing file and a ScenarioError naming the key path and line for any
    schema or invariant violation

    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Cannot find scenario {path}. Please specify a valid scenario file.")
    try:
        return parse_scenario(path.read_text(encoding="utf-8"), str(path))
    except ScenarioError as error:
        raise ScenarioError(error.key_path, error.line, error.message, source=str(path)) from None


def shipped_scenarios():
    return sorted(SCENARIO_DIRECTORY.glob("*.yaml"))
