from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from uscal.geom3d import RigidTransform

FIXTURES = Path(__file__).parent / "fixtures"


def homogeneous(T: RigidTransform) -> np.ndarray:
    """4x4 matrix built through scipy's quaternion conversion, independent of to_matrix."""
    q = T.rotation
    R = Rotation.from_quat([q.x, q.y, q.z, q.w]).as_matrix()
    M = np.eye(4)
    M[:3, :3] = T.scale * R
    M[:3, 3] = T.t
    return M


def hom_apply(M: np.ndarray, p) -> np.ndarray:
    p = np.atleast_2d(np.asarray(p, dtype=float))
    out = (M @ np.column_stack([p, np.ones(len(p))]).T).T
    return out[:, :3] / out[:, 3:]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


# -- acceptance report ------------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    number, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _ACCEPTANCE[number] = (title, f"{status} ({rep.duration:.2f} s)")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {title:<34} {status}")
