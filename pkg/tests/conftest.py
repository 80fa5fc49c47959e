import sys
import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from pinchlift.geometry import Pose, quat_from_axis_angle

settings.register_profile("pinchlift", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pinchlift")

finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


@st.composite
def poses(draw):
    axis = draw(st.tuples(finite, finite, finite).filter(lambda a: np.linalg.norm(a) > 1e-3))
    angle = draw(st.floats(-np.pi, np.pi))
    return Pose(draw(vec3), quat_from_axis_angle(np.array(axis), angle))


def random_pose(rng, scale=1.0):
    q = rng.normal(size=4)
    return Pose(rng.uniform(-scale, scale, 3), q / np.linalg.norm(q))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
