from pathlib import Path

from diffpy.polelift.scenario import SCENARIO_DIRECTORY
from diffpy.utils.tools import get_package_info

SCENARIO_SUFFIXES = (".yaml", ".yml")


def set_output_directory(args):
    """
    set the output directory based on the given input arguments

    Parameters
    ----------
    args argparse.Namespace
        the arguments from the parser

    Returns
    -------
    pathlib.PosixPath that contains the full path of the output directory

    it is determined as follows:
    If user provides an output directory, use it.
    Otherwise, we set it to ./out in the current directory.
    We then create the directory if it does not exist.

    """
    output_dir = Path(args.output_directory) if args.output_directory else Path.cwd() / "out"
    output_dir = output_dir.resolve()
    output_dir.mkdir(parents=True, exist_ok=True)
    return output_dir


def _expand_user_input(args):
    """
    Expands the list of scenario inputs by adding files from file lists and wildcards.

    Parameters
    ----------
    args argparse.Namespace
        the arguments from the parser

    Returns
    -------
    the arguments with the modified scenario list

    """
    file_list_inputs = [input_name for input_name in args.scenario if "file_list" in input_name]
    for file_list_input in file_list_inputs:
        with open(file_list_input, "r") as f:
            file_inputs = [input_name.strip() for input_name in f.readlines() if input_name.strip()]
        args.scenario.extend(file_inputs)
        args.scenario.remove(file_list_input)
    wildcard_inputs = [input_name for input_name in args.scenario if "*" in input_name]
    for wildcard_input in wildcard_inputs:
        input_files = [str(file) for file in Path(".").glob(wildcard_input) if "file_list" not in file.name]
        args.scenario.extend(input_files)
        args.scenario.remove(wildcard_input)
    return args


def _shipped_scenario(name):
    for suffix in ("",) + SCENARIO_SUFFIXES:
        candidate = SCENARIO_DIRECTORY / f"{name}{suffix}"
        if candidate.is_file():
            return candidate.resolve()
    return None


def set_input_lists(args):
    """
    Set the scenario files to run.

    It takes cli inputs, checks if they are files, directories or the names of shipped scenarios and
    creates a sorted list of scenario files which is stored in the args Namespace.

    Parameters
    ----------
    args argparse.Namespace
        the arguments from the parser

    Returns
    -------
    args argparse.Namespace

    """

    input_paths = []
    args = _expand_user_input(args)
    for input_name in args.scenario:
        input_path = Path(input_name).resolve()
        if input_path.exists():
            if input_path.is_file():
                input_paths.append(input_path)
            elif input_path.is_dir():
                input_files = [
                    file.resolve()
                    for file in input_path.glob("*")
                    if file.is_file() and file.suffix in SCENARIO_SUFFIXES and "file_list" not in file.name
                ]
                input_paths.extend(input_files)
            else:
                raise FileNotFoundError(
                    f"Cannot find {input_name}. Please specify valid scenario file(s) or directories."
                )
        elif _shipped_scenario(input_name) is not None:
            input_paths.append(_shipped_scenario(input_name))
        else:
            raise FileNotFoundError(
                f"Cannot find {input_name}. Please specify a scenario file, a directory or the name of a "
                f"shipped scenario."
            )
    input_paths = sorted(set(input_paths))
    stems = [path.stem for path in input_paths]
    duplicates = sorted({stem for stem in stems if stems.count(stem) > 1})
    if duplicates:
        raise ValueError(
            f"Scenario files {duplicates} share a name and would write to the same output directory. "
            f"Please rename them."
        )
    setattr(args, "input_paths", input_paths)
    return args


def load_package_info(args):
    """
    Load diffpy.polelift package name and version into args using get_package_info function from diffpy.utils

    Parameters
    ----------
    args argparse.Namespace
        the arguments from the parser, default is None

    Returns
    -------
    the updated argparse Namespace with diffpy.polelift name and version inserted

    """
    metadata = get_package_info("diffpy.polelift")
    setattr(args, "package_info", metadata["package_info"])
    return args
