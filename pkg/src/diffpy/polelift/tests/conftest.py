from pathlib import Path

import numpy as np
import pytest

from diffpy.polelift.battery import synthetic_voltage_samples
from diffpy.polelift.scenario import SCENARIO_DIRECTORY, load_scenario
from diffpy.polelift.vehicle import reference_vehicle

DEMO_SCENARIO = SCENARIO_DIRECTORY / "demo_two_poles.yaml"


@pytest.fixture
def demo_text():
    return DEMO_SCENARIO.read_text(encoding="utf-8")


@pytest.fixture
def demo_config():
    return load_scenario(DEMO_SCENARIO)


@pytest.fixture
def reference():
    return reference_vehicle()


@pytest.fixture
def user_filesystem(tmp_path, demo_text):
    base_dir = Path(tmp_path)
    input_dir = base_dir / "input_dir"
    input_dir.mkdir(parents=True, exist_ok=True)

    with open(base_dir / "demo.yaml", "w") as f:
        f.write(demo_text)
    with open(base_dir / "notes.txt", "w") as f:
        f.write("This is a file with no scenario in it")
    with open(base_dir / "broken.yaml", "w") as f:
        f.write(demo_text.replace("  mass: 8.26\n", "  mass: 8.26\n  wingspan: 2.1\n"))

    with open(input_dir / "alpha.yaml", "w") as f:
        f.write(demo_text.replace("name: demo_two_poles", "name: alpha"))
    with open(input_dir / "beta.yml", "w") as f:
        f.write(demo_text.replace("name: demo_two_poles", "name: beta"))
    with open(input_dir / "notes.txt", "w") as f:
        f.write("not a scenario")

    with open(input_dir / "file_list.txt", "w") as f:
        f.write("demo.yaml \n input_dir/alpha.yaml \n missing_scenario.yaml")
    with open(input_dir / "file_list_example2.txt", "w") as f:
        f.write("input_dir/*.yaml \n")
        f.write("demo.yaml \n")
        f.write(f"{str(input_dir.resolve() / 'beta.yml')}\n")

    samples = synthetic_voltage_samples(930.0, 24.0, np.linspace(21.0, 25.2, 6))
    np.savetxt(
        base_dir / "voltage_samples.csv", samples, delimiter=",", header="speed,voltage,command", comments=""
    )

    yield tmp_path
