import csv
from pathlib import Path

import numpy as np
import yaml

from diffpy.polelift.mission import (
    MetricsRecorder,
    compute_attitude_errors,
    compute_radial_error,
    compute_tip_error,
)
from diffpy.polelift.so3 import from_quaternion, rot_z, to_quaternion, vee

RUNLOG_VERSION = 1
RUNLOG_MAGIC = f"# polelift runlog v{RUNLOG_VERSION}"
N_ROTORS = 8

COLUMNS = (
    ["t", "p_x", "p_y", "p_z", "q_w", "q_x", "q_y", "q_z", "v_x", "v_y", "v_z", "omega_x", "omega_y", "omega_z"]
    + [f"w_cmd_{i}" for i in range(N_ROTORS)]
    + [f"w_act_{i}" for i in range(N_ROTORS)]
    + ["u_fx", "u_fy", "u_fz", "u_tx", "u_ty", "u_tz", "slack_norm", "e_r", "e_r_tip", "phase", "voltage"]
    + ["p_des_x", "p_des_y", "p_des_z", "yaw_des", "tip_lever"]
)
PHASE_COLUMN = COLUMNS.index("phase")


def _number(value):
    return repr(float(value))


class RunLog:
    """
    Controller-rate log of one run.

    one row per control tick; floats are written with their shortest round-trip representation so the file
    reproduces the in-memory values exactly
    """

    def __init__(self):
        self.rows = []

    def __len__(self):
        return len(self.rows)

    def record(self, t, state, motor, wrench, slack_norm, e_r, e_r_tip, phase, voltage, setpoint, tip_lever):
        if self.rows and t <= float(self.rows[-1][0]):
            raise ValueError(f"Run log time must be strictly increasing, got t={t} after t={self.rows[-1][0]}.")
        yaw_des = float(np.arctan2(setpoint.rotation[1, 0], setpoint.rotation[0, 0]))
        numbers = np.concatenate(
            [
                [t],
                state.position,
                to_quaternion(state.rotation),
                state.velocity,
                state.angular_velocity,
                motor.w_cmd,
                motor.w_act,
                wrench,
                [slack_norm, e_r, e_r_tip],
            ]
        )
        row = [_number(value) for value in numbers]
        row += [phase, _number(voltage)]
        row += [_number(value) for value in np.concatenate([setpoint.position, [yaw_des, tip_lever]])]
        self.rows.append(row)

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(RUNLOG_MAGIC + "\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(COLUMNS)
            writer.writerows(self.rows)
        return Path(path)


def read_runlog(path):
    """
    Read a run log.

    Parameters
    ----------
    path str or pathlib.Path
        the CSV file

    Returns
    -------
    dict column name -> numpy array, the phase column as a list of str

    we raise a ValueError when the version line or the header does not match this version of the format

    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Cannot find run log {path}. Please specify a valid run log file.")
    with open(path, "r", encoding="utf-8", newline="") as f:
        magic = f.readline().rstrip("\n")
        if magic != RUNLOG_MAGIC:
            raise ValueError(f"{path} is not a polelift run log (expected first line '{RUNLOG_MAGIC}').")
        reader = csv.reader(f)
        header = next(reader, None)
        if header != COLUMNS:
            raise ValueError(f"{path} has an unexpected header. Please regenerate the log with this version.")
        rows = list(reader)
    columns = {}
    for index, name in enumerate(COLUMNS):
        values = [row[index] for row in rows]
        columns[name] = values if index == PHASE_COLUMN else np.array(values, dtype=float)
    return columns


def recompute_metrics(columns):
    """
    Recompute the precision metrics from the logged state and setpoint.

    Parameters
    ----------
    columns dict
        as returned by read_runlog

    Returns
    -------
    dict with the recomputed e_r and e_r_tip arrays, their largest deviation from the logged values and the
    per-phase aggregates

    """
    n = len(columns["t"])
    e_r = np.empty(n)
    e_r_tip = np.empty(n)
    recorder = MetricsRecorder()
    for i in range(n):
        position = np.array([columns["p_x"][i], columns["p_y"][i], columns["p_z"][i]])
        desired = np.array([columns["p_des_x"][i], columns["p_des_y"][i], columns["p_des_z"][i]])
        quaternion = [columns["q_w"][i], columns["q_x"][i], columns["q_y"][i], columns["q_z"][i]]
        R = from_quaternion(quaternion)
        R_des = rot_z(columns["yaw_des"][i])
        e_p = position - desired
        e_R = 0.5 * vee(R_des.T @ R - R.T @ R_des)
        e_r[i] = compute_radial_error(e_p)
        e_r_tip[i] = compute_radial_error(compute_tip_error(e_p, e_R, 2.0 * columns["tip_lever"][i]))
        roll, pitch = compute_attitude_errors(R, R_des)
        recorder.record(columns["t"][i], columns["phase"][i], e_r[i], e_r_tip[i], roll, pitch)
    return {
        "e_r": e_r,
        "e_r_tip": e_r_tip,
        "e_r_deviation": float(np.max(np.abs(e_r - columns["e_r"]), initial=0.0)),
        "e_r_tip_deviation": float(np.max(np.abs(e_r_tip - columns["e_r_tip"]), initial=0.0)),
        "aggregates": recorder.aggregates(),
    }


def write_report(report, path):
    """Write a summary report as YAML, keys in insertion order."""
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(report, f, sort_keys=False, default_flow_style=False)
    return Path(path)
