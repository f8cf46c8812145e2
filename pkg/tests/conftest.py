import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sqgrasp.geometry import procedural  # noqa: E402
from sqgrasp.geometry.mesh import TriangleMesh  # noqa: E402
from sqgrasp.graspgen import GripperModel  # noqa: E402

CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion checked")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, text = mark.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        verdict = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        previous = CRITERIA.get(number, (text, "PASS"))[1]
        if previous != "PASS":
            verdict = previous
        CRITERIA[number] = (text, verdict)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        text, verdict = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {verdict} - {text}")


@pytest.fixture
def unit_cube():
    return procedural.box((1.0, 1.0, 1.0))


@pytest.fixture
def coarse_sphere():
    """Icosphere of radius 0.25 with 320 triangles."""
    return procedural.icosphere(0.25, 2)


@pytest.fixture
def wide_gripper():
    """Opens wide enough for every corpus object's thinnest slab."""
    return GripperModel(max_opening=0.7, finger_length=0.35, finger_thickness=0.02,
                        palm_extent=(0.05, 0.74, 0.02), lattice_pitch=0.02)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cube_obj_text(drop_face=None):
    v = [(x, y, z) for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)]
    m = procedural.box((1.0, 1.0, 1.0))
    faces = [tuple(int(i) for i in f) for f in m.triangles]
    verts = [tuple(float(c) for c in p) for p in m.vertices]
    assert sorted(verts) == sorted(v)
    if drop_face is not None:
        faces.pop(drop_face)
    lines = [f"v {x} {y} {z}" for x, y, z in verts]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    return "\n".join(lines) + "\n"


def as_mesh(vertices, triangles):
    return TriangleMesh(vertices, triangles)
