import numpy as np
import pytest

from safeinsert.kinematics import ArmModel, reference_arm
from safeinsert.simenv import home_configuration


@pytest.fixture(scope="session")
def arm():
    return reference_arm()


@pytest.fixture(scope="session")
def work_q(arm):
    """Working configuration with the tool pointing straight down."""
    from safeinsert.geometry import Pose

    return home_configuration(arm, Pose.from_xyz(-0.865, -0.164, 0.37))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def planar_one_link(a=0.5):
    return ArmModel(dh=[[a, 0.0, 0.0, 0.0]], joint_limits=[[-np.pi, np.pi]])


def planar_two_link(a1=0.5, a2=0.4):
    return ArmModel(dh=[[a1, 0.0, 0.0, 0.0], [a2, 0.0, 0.0, 0.0]], joint_limits=[[-np.pi, np.pi]] * 2)


# -- acceptance criteria reporting -----------------------------------------
# Tests marked ``criterion(n, title)`` record a one-line verdict that is
# printed in the terminal summary; the measured numbers come from the
# ``detail`` user property.

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when == "teardown" or (rep.when == "setup" and rep.passed):
        return
    n, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "setup":
        detail = "setup error"
    _CRITERIA[n] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
