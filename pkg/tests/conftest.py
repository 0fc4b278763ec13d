import sys

import numpy as np
import pytest

from densegrasp import shapes
from densegrasp.depth_render import CameraModel, render_depth
from densegrasp.mesh_scene import Scene


@pytest.fixture(scope="session")
def cube_scene():
    return Scene.on_table([shapes.cube(30.0)])


@pytest.fixture(scope="session")
def camera():
    return CameraModel.top_down(600.0, 640, 480)


@pytest.fixture(scope="session")
def cube_depth(cube_scene, camera):
    return render_depth(cube_scene, camera, 640, 480)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
