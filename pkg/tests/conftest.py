import math
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from quasidelta.circuit import Incidence, build_graph, make_params, theta_from_chi  # noqa: E402
from quasidelta.fem import assemble, uniform_mesh  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]

ACCEPTANCE_LINES: list[str] = []


def star_spec():
    return {"vertices": ["v"],
            "edges": [{"id": "e1", "length": 1.0, "ends": [None, "v"]},
                      {"id": "e2", "length": 1.0, "ends": [None, "v"]}]}


def star_family(elements=40, delta=0.4, chi_bar=(0.0, math.pi), chi=None):
    g = build_graph(star_spec())
    p = make_params(g, {"v": delta}, chi)
    th = None
    if chi_bar is not None:
        th = theta_from_chi(g, {Incidence("v", "e1", 1): chi_bar[0], Incidence("v", "e2", 1): chi_bar[1]})
    return assemble(g, p, th, uniform_mesh(g, elements))


def interval_family(length=math.pi, elements=200, coefficients=None):
    from quasidelta.circuit import potential_from_coefficients
    g = build_graph({"vertices": [], "edges": [{"id": "e", "length": length, "ends": [None, None]}]})
    p = make_params(g, {})
    th = potential_from_coefficients(g, {"e": coefficients}) if coefficients is not None else None
    return assemble(g, p, th, uniform_mesh(g, elements))


@pytest.fixture
def star():
    return star_family()


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
