import json

import numpy as np
import pytest

from resforge.model import load_model, load_model_file


def chain_doc(lengths, masses, tau_lim, name="chain", task_dim=2, inertia=None):
    joints, links = [], []
    for i, (length, mass, tau) in enumerate(zip(lengths, masses, tau_lim)):
        joints.append({
            "parent": i - 1,
            "origin": {"xyz": [lengths[i - 1] if i else 0.0, 0, 0], "rpy": [0, 0, 0]},
            "axis": [0, 0, 1],
            "q_limits": [-np.pi, np.pi],
            "v_limits": [-10, 10],
            "tau_limit": tau,
        })
        links.append({"mass": mass, "com": [length, 0, 0],
                      "inertia": inertia or [0, 0, 0, 0, 0, 0]})
    return {"name": name, "task_dim": task_dim, "joints": joints, "links": links,
            "end_effector": {"xyz": [lengths[-1], 0, 0], "rpy": [0, 0, 0]}}


@pytest.fixture
def pendulum():
    return load_model(json.dumps(chain_doc([1.0], [1.0], [20.0], name="pendulum")))


@pytest.fixture
def arm2r():
    """Planar 2R arm, unit links, unit point masses at the link tips, unit torque limits."""
    return load_model(json.dumps(chain_doc([1.0, 1.0], [1.0, 1.0], [1.0, 1.0], name="2r")))


@pytest.fixture
def planar3():
    return load_model_file("planar3")


@pytest.fixture
def spatial7():
    return load_model_file("spatial7")


# the desk-scale task: a 0.2 m stroke along a horizontal line 2.8 m below the base
TASK_Y = -2.8


def planar3_scenario_doc(objective="A", **extra):
    doc = {
        "model": "planar3",
        "p_I": [-0.1, TASK_Y],
        "p_F": [0.1, TASK_Y],
        "surface": {"corner": [-1.0, TASK_Y, -0.5], "edge_u": [2.0, 0, 0], "edge_v": [0, 0, 1.0]},
        "duration": 1.0,
        "segments": 10,
        "objective": objective,
    }
    doc.update(extra)
    return doc


def arm2r_scenario(model, objective="A", segments=4, **kw):
    """Scenario on the z = 0 plane, which holds every point a planar arm can reach."""
    from resforge.model import Rectangle
    from resforge.transcription import Scenario
    rect = Rectangle([-3.0, -3.0, 0.0], [6.0, 0, 0], [0, 6.0, 0])
    return Scenario("2r", np.array([1.0, 1.0]), np.array([0.0, 1.5]), rect, segments=segments,
                    objective=objective, **kw)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
