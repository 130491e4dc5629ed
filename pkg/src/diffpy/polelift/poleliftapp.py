import logging
import sys
from argparse import ArgumentParser
from multiprocessing import Pool

import numpy as np
import yaml

from diffpy.polelift.allocation import allocation_audit
from diffpy.polelift.battery import fit_voltage_map, nominal_top_speed
from diffpy.polelift.runlog import read_runlog, recompute_metrics, write_report
from diffpy.polelift.scenario import ScenarioError, load_scenario
from diffpy.polelift.simulation import ExitCode, hover_experiment, run_scenario
from diffpy.polelift.tools import load_package_info, set_input_lists, set_output_directory

logger = logging.getLogger(__name__)

KKT_AUDIT_LIMIT = 1e-8


def _add_scenario_argument(p, batch=False):
    if batch:
        p.add_argument(
            "scenario",
            nargs="+",
            help="The scenario file(s) or folder(s) to run.  Required.\nSupply a space-separated list of "
            "files, directories or names of shipped scenarios (e.g. 'demo_two_poles'). Long lists can be "
            "supplied, one per line, in a file with name file_list.txt. If a directory is provided, all "
            "*.yaml files in that directory will be run. Wildcards such as 'scenarios/*.yaml' are expanded.",
        )
    else:
        p.add_argument(
            "-s",
            "--scenario",
            help="The scenario file or the name of a shipped scenario. Default is demo_two_poles.",
            default="demo_two_poles",
        )


def _add_output_arguments(p):
    p.add_argument(
        "-o",
        "--output-directory",
        help="The name of the output directory. If not specified then results are written to ./out. "
        "Each scenario writes into its own subdirectory named after the scenario file. "
        "If the specified directory doesn't exist it will be created.",
        default=None,
    )
    p.add_argument(
        "-f",
        "--force-overwrite",
        action="store_true",
        help="Outputs will not overwrite existing files unless --force-overwrite is specified.",
    )
    p.add_argument(
        "--seed",
        help="Seed of the measurement noise. Overrides the seed in the scenario file.",
        default=None,
        type=int,
    )


def get_args(override_cli_inputs=None):
    p = ArgumentParser(prog="polelift", description="Simulate pole stacking with a tilted-rotor octocopter.")
    p.add_argument(
        "-v",
        "--verbose",
        action="store_true",
        help="Log mission events and solver diagnostics. Default is to report warnings and errors only.",
    )
    commands = p.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Fly the stacking mission of one or more scenarios.")
    _add_scenario_argument(run, batch=True)
    _add_output_arguments(run)
    run.add_argument(
        "-j",
        "--jobs",
        help="Number of scenarios simulated concurrently. Default is 1.",
        default=1,
        type=int,
    )

    hover = commands.add_parser("hover", help="Hover in place holding a pole and report the precision metrics.")
    _add_scenario_argument(hover)
    _add_output_arguments(hover)
    hover.add_argument("--length", help="Pole length in m. Default is 2.0.", default=2.0, type=float)
    hover.add_argument("--mass", help="Pole mass in kg. Default is 3.0.", default=3.0, type=float)
    hover.add_argument("--radius", help="Pole radius in m. Default is 0.05.", default=0.05, type=float)
    hover.add_argument("--duration", help="Hover time in s. Default is 60.", default=60.0, type=float)

    verify = commands.add_parser(
        "verify-allocation", help="Audit the allocation matrix and the allocation QP of a scenario's vehicle."
    )
    _add_scenario_argument(verify)
    verify.add_argument(
        "-n", "--instances", help="Number of random wrenches to allocate. Default is 100.", default=100, type=int
    )
    verify.add_argument(
        "--payload-mass",
        help="Payload mass in kg used for the thrust-to-weight ratio. Default is 3.0.",
        default=3.0,
        type=float,
    )
    verify.add_argument("--seed", help="Seed of the random wrenches. Default is 0.", default=0, type=int)

    fit = commands.add_parser("fit-voltage", help="Fit a voltage compensation map to recorded samples.")
    fit.add_argument(
        "--samples",
        required=True,
        help="CSV file with a header row speed,voltage,command and one sample per row. Required.",
    )
    fit.add_argument(
        "--speed-scale",
        help="Speed normalization in rad/s. Default is the full-command speed at nominal voltage implied by the "
        "samples.",
        default=None,
        type=float,
    )
    fit.add_argument(
        "--nominal-voltage", help="Voltage normalization in V. Default is 24.0.", default=24.0, type=float
    )

    metrics = commands.add_parser("metrics", help="Recompute the precision metrics from a run log.")
    metrics.add_argument("--log", required=True, help="The run log CSV file. Required.")

    args = p.parse_args(override_cli_inputs)
    return args


def _print_yaml(data):
    sys.stdout.write(yaml.safe_dump(data, sort_keys=False, default_flow_style=False))


def _prepare_output(directory, force_overwrite):
    runlog_file, report_file = directory / "runlog.csv", directory / "report.yaml"
    for path in (runlog_file, report_file):
        if path.exists() and not force_overwrite:
            raise FileExistsError(
                f"Output file {str(path)} already exists. Please rerun specifying -f if you want to overwrite it."
            )
    directory.mkdir(parents=True, exist_ok=True)
    return runlog_file, report_file


def _write_result(result, directory, force_overwrite):
    runlog_file, report_file = _prepare_output(directory, force_overwrite)
    result.log.write(runlog_file)
    write_report(result.report, report_file)
    return report_file


def _run_one(job):
    scenario_file, seed, directory, force_overwrite, package_info = job
    try:
        config = load_scenario(scenario_file)
        _prepare_output(directory, force_overwrite)
    except (ScenarioError, FileNotFoundError, FileExistsError) as error:
        logger.error("%s", error)
        sys.stderr.write(f"{error}\n")
        return int(ExitCode.CONFIG_ERROR)
    result = run_scenario(config, seed, package_info)
    report_file = _write_result(result, directory, force_overwrite)
    sys.stdout.write(
        f"{config.name}: {result.report['outcome']} after {result.report['total_time']:.2f} s, "
        f"exit code {int(result.exit_code)}, report {report_file}\n"
    )
    return int(result.exit_code)


def run_command(args):
    args = load_package_info(args)
    args = set_input_lists(args)
    args.output_directory = set_output_directory(args)
    if args.jobs < 1:
        raise ValueError(f"Number of jobs must be positive, got {args.jobs}. Please rerun with --jobs 1 or more.")
    jobs = [
        (path, args.seed, args.output_directory / path.stem, args.force_overwrite, args.package_info)
        for path in args.input_paths
    ]
    if args.jobs > 1 and len(jobs) > 1:
        with Pool(min(args.jobs, len(jobs))) as pool:
            codes = pool.map(_run_one, jobs)
    else:
        codes = [_run_one(job) for job in jobs]
    return max(codes, default=int(ExitCode.SUCCESS))


def _scenario_path(args):
    args.scenario = [args.scenario]
    args = set_input_lists(args)
    return args.input_paths[0]


def hover_command(args):
    args = load_package_info(args)
    scenario_file = _scenario_path(args)
    config = load_scenario(scenario_file)
    args.output_directory = set_output_directory(args)
    directory = args.output_directory / f"{scenario_file.stem}_hover"
    _prepare_output(directory, args.force_overwrite)
    result = hover_experiment(
        config, args.length, args.mass, args.radius, args.duration, args.seed, args.package_info
    )
    _write_result(result, directory, args.force_overwrite)
    _print_yaml({"outcome": result.report["outcome"], "metrics": result.report["metrics"]})
    return int(result.exit_code)


def verify_allocation_command(args):
    config = load_scenario(_scenario_path(args))
    audit = allocation_audit(config.vehicle, config.weights, args.instances, np.random.default_rng(args.seed))
    weight = (config.vehicle.mass + args.payload_mass) * config.vehicle.gravity
    _print_yaml(
        {
            "rank": audit.rank,
            "nullity": int(audit.nullspace.shape[1]),
            "singular_values": [float(value) for value in audit.singular_values],
            "envelope_N": audit.envelope,
            "thrust_to_weight": audit.envelope / weight,
            "instances": audit.n_instances,
            "worst_kkt_residual": float(audit.worst_kkt_residual),
            "worst_slack_ratio": float(audit.worst_slack_ratio),
        }
    )
    if audit.worst_kkt_residual >= KKT_AUDIT_LIMIT:
        logger.error("KKT residual %.3e above %.0e", audit.worst_kkt_residual, KKT_AUDIT_LIMIT)
        return int(ExitCode.DIVERGENCE)
    return int(ExitCode.SUCCESS)


def fit_voltage_command(args):
    samples = np.loadtxt(args.samples, delimiter=",", skiprows=1, ndmin=2)
    speed_scale = args.speed_scale if args.speed_scale else nominal_top_speed(samples, args.nominal_voltage)
    voltage_map = fit_voltage_map(samples, speed_scale, args.nominal_voltage)
    _print_yaml(
        {
            "speed_scale": speed_scale,
            "nominal_voltage": args.nominal_voltage,
            "coefficients": voltage_map.coefficients.tolist(),
            "max_residual": voltage_map.max_residual,
        }
    )
    return int(ExitCode.SUCCESS)


def metrics_command(args):
    recomputed = recompute_metrics(read_runlog(args.log))
    _print_yaml(
        {
            "samples": len(recomputed["e_r"]),
            "e_r_deviation": recomputed["e_r_deviation"],
            "e_r_tip_deviation": recomputed["e_r_tip_deviation"],
            "metrics": recomputed["aggregates"],
        }
    )
    return int(ExitCode.SUCCESS)


COMMANDS = {
    "run": run_command,
    "hover": hover_command,
    "verify-allocation": verify_allocation_command,
    "fit-voltage": fit_voltage_command,
    "metrics": metrics_command,
}


def main(override_cli_inputs=None):
    args = get_args(override_cli_inputs)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        code = COMMANDS[args.command](args)
    except (ValueError, OSError) as error:
        sys.stderr.write(f"{error}\n")
        code = int(ExitCode.CONFIG_ERROR)
    sys.exit(code)


if __name__ == "__main__":
    main()
