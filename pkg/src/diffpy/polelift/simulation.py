import logging
from dataclasses import asdict, dataclass
from enum import Enum, IntEnum

import numpy as np

from diffpy.polelift.allocation import ActiveSetSolver, QpIterationError, build_qp
from diffpy.polelift.battery import MotorDriver
from diffpy.polelift.controller import GeometricController, Setpoint, compute_errors
from diffpy.polelift.dynamics import (
    MotorState,
    RigidState,
    SimulationDivergenceError,
    measure_state,
    motor_lag_step,
    rk4_step,
)
from diffpy.polelift.mission import (
    Z_AXIS,
    MetricsRecorder,
    Mission,
    MissionOutcome,
    compute_attitude_errors,
    compute_radial_error,
    compute_tip_error,
)
from diffpy.polelift.runlog import RunLog
from diffpy.polelift.trajectory import Waypoint, plan_segments, sample_setpoint
from diffpy.polelift.vehicle import PayloadSpec, compose_payload, remove_payload

logger = logging.getLogger(__name__)


class ExitCode(IntEnum):
    SUCCESS = 0
    MISSION_ABORT = 2
    DIVERGENCE = 3
    CONFIG_ERROR = 4


class ExperimentPhase(Enum):
    HOVER = "Hover"
    TRAJECTORY = "Trajectory"


def hover_wrench(params, rotation):
    """Body wrench that holds the vehicle at rest with the given attitude."""
    force = params.mass * rotation.T @ params.gravity_vector
    return np.concatenate([force, np.cross(params.com_offset, force)])


class TrajectoryPlanner:
    """
    Waypoint-following planner for the precision experiments.

    Parameters
    ----------
    waypoints list of Waypoint
        the flight plan, a single waypoint holds position for its hold time
    max_speed, max_acceleration, min_duration float
        the segment timing caps

    the planner offers the same interface as Mission so both run on the same simulation loop
    """

    def __init__(self, waypoints, max_speed=0.5, max_acceleration=0.25, min_duration=1.0):
        if not waypoints:
            raise ValueError("A trajectory needs at least one waypoint.")
        self.waypoints = list(waypoints)
        self.schedule = plan_segments(self.waypoints, max_speed, max_acceleration, min_duration)
        if self.schedule:
            start, last = self.schedule[-1]
            self.end_time = start + last.duration + self.waypoints[-1].hold
            self.phase = ExperimentPhase.TRAJECTORY
        else:
            self.end_time = self.waypoints[0].hold
            self.phase = ExperimentPhase.HOVER
        self.transitions = [(0.0, self.phase.value)]
        self.placements = []
        self.outcome = MissionOutcome.RUNNING
        self.abort_reason = None
        self.tip_lever = 0.0

    @property
    def finished(self):
        return self.outcome is not MissionOutcome.RUNNING

    def step(self, t, measured, truth):
        if t >= self.end_time:
            self.outcome = MissionOutcome.SUCCESS
        return self.setpoint(t)

    def setpoint(self, t):
        if not self.schedule:
            first = self.waypoints[0]
            return Setpoint.hover(first.position, first.yaw)
        start, segment = self.schedule[0]
        for candidate_start, candidate in self.schedule:
            if candidate_start <= t:
                start, segment = candidate_start, candidate
        return sample_setpoint(segment, t - start)


class FlightSimulator:
    """
    The closed loop: plant, motors, battery, measurement, controller and allocation stepped on one clock.

    Parameters
    ----------
    config ScenarioConfig
        the validated scenario
    seed int
        seeds the measurement noise, defaults to the scenario seed
    position array_like
        where the vehicle starts at rest, defaults to the scenario home
    payload PayloadSpec
        a pole already held at start

    the vehicle starts in hover equilibrium; the plant and the controller model always carry the same payload
    """

    def __init__(self, config, seed=None, position=None, payload=None):
        self.config = config
        self.seed = config.seed if seed is None else seed
        self.rng = np.random.default_rng(self.seed)
        self.plant = config.vehicle
        self.payload = None
        self.controller = GeometricController(config.vehicle, config.gains)
        self.solver = ActiveSetSolver()
        self.driver = MotorDriver.for_battery(
            config.motors.top_speed, config.battery, config.compensation, config.motors.quantization_bits
        )
        self.state = RigidState.at_rest(config.home if position is None else position)
        self.log = RunLog()
        self.metrics = MetricsRecorder()
        self.time = 0.0
        if payload is not None:
            self.attach_payload(payload)
        self.trim()

    def trim(self):
        """Set the motors to the allocation of the hover wrench."""
        solution = self.solver.solve(self._problem(hover_wrench(self.plant, self.state.rotation)))
        self.motor = MotorState.steady(solution.w, self.plant, self.config.motors.time_constant)

    def attach_payload(self, payload):
        self.plant = compose_payload(self.plant, payload)
        self.payload = payload
        gains = self.config.loaded_gains
        if gains is None:
            gains = self.config.gains.scaled(self.plant.mass / self.config.vehicle.mass)
        self.controller.switch_model(self.plant, gains)

    def detach_payload(self):
        self.plant = remove_payload(self.plant, self.payload)
        self.payload = None
        self.controller.switch_model(self.plant, self.config.gains)

    def freeze_integral(self, frozen):
        self.controller.freeze_integral(frozen)

    def _problem(self, wrench):
        params = self.controller.params
        return build_qp(
            params.allocation_matrix, wrench, self.config.weights, (params.w_min, params.w_max), params.main_mask
        )

    def run(self, planner, time_limit):
        """
        Fly the planner until it finishes or the time limit passes.

        Parameters
        ----------
        planner Mission or TrajectoryPlanner
            provides step(t, measured, truth), finished, phase and tip_lever
        time_limit float
            hard stop of the loop, s

        Returns
        -------
        the simulated time at which the loop stopped

        SimulationDivergenceError and QpIterationError propagate, self.time then holds the failing tick
        """
        rates = self.config.rates
        dt = rates.physics_dt
        sigma_position, sigma_attitude = self.config.noise.sigmas
        setpoint = planner.setpoint(0.0)
        k = 0
        while True:
            t = k * dt
            self.time = t
            if t > time_limit:
                logger.warning("t=%.2f s: time limit of %.1f s reached", t, time_limit)
                break
            control_tick = k % rates.controller_divisor == 0
            planner_tick = k % rates.planner_divisor == 0
            if control_tick or planner_tick:
                measured = measure_state(self.state, self.rng, sigma_position, sigma_attitude)
            if planner_tick:
                setpoint = planner.step(t, measured, self.state)
                if planner.finished:
                    break
            if control_tick:
                self._control(t, measured, setpoint, planner)
            self.motor = motor_lag_step(self.motor, dt)
            self.state = rk4_step(self.state, self.motor, self.plant, dt, t)
            k += 1
        return self.time

    def _control(self, t, measured, setpoint, planner):
        wrench = self.controller.update(measured, setpoint, self.config.rates.controller_dt)
        solution = self.solver.solve(self._problem(wrench))
        voltage = self.config.battery.voltage_at(t)
        command = self.driver.command(solution.w, voltage)
        w_cmd = np.clip(self.driver.achieved(command, voltage), self.plant.w_min, self.plant.w_max)
        self.motor = self.motor.commanded(w_cmd)
        errors = compute_errors(self.state, setpoint)
        tip_lever = planner.tip_lever
        e_r = compute_radial_error(errors.position)
        e_r_tip = compute_radial_error(compute_tip_error(errors.position, errors.rotation, 2.0 * tip_lever))
        roll, pitch = compute_attitude_errors(self.state.rotation, setpoint.rotation)
        phase = planner.phase.value
        self.metrics.record(t, phase, e_r, e_r_tip, roll, pitch)
        self.log.record(
            t,
            self.state,
            self.motor,
            wrench,
            float(np.linalg.norm(solution.slack)),
            e_r,
            e_r_tip,
            phase,
            voltage,
            setpoint,
            tip_lever,
        )


@dataclass(eq=False)
class SimulationResult:
    log: RunLog
    report: dict
    exit_code: ExitCode
    simulator: FlightSimulator
    planner: object


def _fly(simulator, planner, time_limit, package_info):
    error = None
    try:
        simulator.run(planner, time_limit)
    except (SimulationDivergenceError, QpIterationError) as diverged:
        logger.error("%s", diverged)
        error = str(diverged)
    if error is not None:
        exit_code = ExitCode.DIVERGENCE
    elif planner.outcome is MissionOutcome.ABORTED:
        exit_code = ExitCode.MISSION_ABORT
    else:
        exit_code = ExitCode.SUCCESS
    report = build_report(simulator, planner, exit_code, error, package_info)
    return SimulationResult(simulator.log, report, exit_code, simulator, planner)


def build_report(simulator, planner, exit_code, error=None, package_info=None):
    """
    Summary of a run as plain data, reproducible for identical scenario and seed.

    Returns
    -------
    an insertion-ordered dict of builtin types, ready for yaml.safe_dump
    """
    config = simulator.config
    if error is not None:
        outcome = "diverged"
    else:
        outcome = planner.outcome.value
    return {
        "scenario": config.name,
        "config_hash": config.config_hash,
        "seed": int(simulator.seed),
        "outcome": outcome,
        "exit_code": int(exit_code),
        "abort_reason": planner.abort_reason if error is None else error,
        "total_time": round(float(simulator.time), 6),
        "phases": [{"t": float(t), "phase": phase} for t, phase in planner.transitions],
        "metrics": simulator.metrics.aggregates(),
        "placements": [asdict(placement) for placement in planner.placements],
        "defaults_applied": list(config.defaults_applied),
        "package_info": dict(package_info or {}),
    }


def run_scenario(config, seed=None, package_info=None):
    """
    Fly the two-pole stacking mission of a scenario.

    Parameters
    ----------
    config ScenarioConfig
        the validated scenario
    seed int
        overrides the scenario seed
    package_info dict
        package versions echoed into the report

    Returns
    -------
    a SimulationResult with the run log, the summary report and the exit code

    """
    simulator = FlightSimulator(config, seed)
    mission = Mission(
        config.poles,
        config.mount,
        config.home,
        config.gripper,
        simulator,
        config.gripper_timing,
        config.grasp_offset,
        config.mission,
    )
    logger.info("running scenario %s with seed %d", config.name, simulator.seed)
    return _fly(simulator, mission, config.mission.time_limit + 1.0, package_info)


def hover_experiment(config, length=2.0, mass=3.0, radius=0.05, duration=60.0, seed=None, package_info=None):
    """
    Hover in place holding a pole, the precision experiment behind the e_r and tip error figures.

    Parameters
    ----------
    config ScenarioConfig
        supplies the vehicle, gains, noise and battery
    length, mass, radius float
        the held pole, m, kg, m
    duration float
        s

    Returns
    -------
    a SimulationResult, the metrics recorded under the phase "Hover"

    """
    position = config.home + config.mission.takeoff_height * Z_AXIS
    payload = PayloadSpec.tube(mass, length, radius, offset=(0.0, 0.0, config.grasp_offset))
    simulator = FlightSimulator(config, seed, position=position, payload=payload)
    planner = TrajectoryPlanner([Waypoint(position, hold=duration)])
    planner.tip_lever = 0.5 * length
    return _fly(simulator, planner, duration + 1.0, package_info)


def lateral_step_experiment(config, distance=1.0, settle=3.0, seed=None, package_info=None):
    """Fly a flat-attitude step of the given length along world x and hold."""
    start = config.home + config.mission.takeoff_height * Z_AXIS
    waypoints = [Waypoint(start, hold=1.0), Waypoint(start + distance * np.array([1.0, 0.0, 0.0]), hold=settle)]
    settings = config.mission
    planner = TrajectoryPlanner(
        waypoints, settings.max_speed, settings.max_acceleration, settings.min_segment_duration
    )
    simulator = FlightSimulator(config, seed, position=start)
    return _fly(simulator, planner, planner.end_time + 1.0, package_info)
