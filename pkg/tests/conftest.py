import json
import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from sfe.model import parse_instance  # noqa: E402
from sfe.scenarios import toy_car_instance, two_loop_doc, two_loop_instance  # noqa: E402

ACCEPTANCE_LINES: dict[int, str] = {}

# one junction, three roads: a short one out of the left junction, two long ones back
THREE_ROAD_GRID = ["v<<<<", "+>>>+", "^<<<<"]


def three_road_doc(agents=1, source_cell=(4, 0), sink_cell=(1, 1), runtimes=(1, 1)):
    doc = two_loop_doc(agents, *runtimes)
    doc["grid"] = list(THREE_ROAD_GRID)
    doc["machines"][0]["output_cell"] = list(source_cell)
    doc["machines"][1]["input_cell"] = list(sink_cell)
    return doc


def chain_doc(agents=2, grid=None, cells=((0, 1), (2, 1), (0, 1), (2, 1)), runtimes=(1, 2, 1)):
    """Source -> refine -> sink with two tokens; buffer cells given as
    (source out, refiner in, refiner out, sink in)."""
    return {
        "tokens": ["ore", "bar"],
        "processes": [
            {"id": "dig", "inputs": {}, "outputs": {"ore": 1}, "output": False},
            {"id": "smelt", "inputs": {"ore": 1}, "outputs": {"bar": 1}, "output": False},
            {"id": "ship", "inputs": {"bar": 1}, "outputs": {}, "output": True},
        ],
        "machines": [
            {"id": "mine", "supported": {"dig": runtimes[0]}, "input_cell": None, "output_cell": list(cells[0])},
            {"id": "furnace", "supported": {"smelt": runtimes[1]}, "input_cell": list(cells[1]),
             "output_cell": list(cells[2])},
            {"id": "dock", "supported": {"ship": runtimes[2]}, "input_cell": list(cells[3]), "output_cell": None},
        ],
        "agents": agents,
        "grid": list(grid or [".v<", "v+^", ">^."]),
    }


def make(doc, strict=False):
    return parse_instance(json.dumps(doc), strict=strict)


@pytest.fixture
def two_loop():
    return two_loop_instance(1)


@pytest.fixture
def toy_car():
    return toy_car_instance(20)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
