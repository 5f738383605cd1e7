import numpy as np
import pytest

from flagdim import shipped_measure, shipped_measures
from flagdim.estimate import ReportParams, verify_report
from flagdim.randwalk import MatrixMeasure, rotation

ACCEPTANCE_LINES = []


def record(number: int, ok: bool, detail: str = ""):
    """Log one acceptance line and fail the test when ``ok`` is false."""
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def point_mass(m):
    m = np.asarray(m, dtype=float)
    return MatrixMeasure(np.array([1.0]), m[None], name="point")


def conjugated_diag(values, seed=0):
    """Point mass at C diag(values) C^{-1} with a fixed well-conditioned C."""
    c = np.array([[1, 0, 0], [0.6, 1, 0], [0.2, 0.4, 1.0]]) @ np.array([[1, 0.7, 0.3], [0, 1, 0.5], [0, 0, 1.0]])
    return point_mass(c @ np.diag(values) @ np.linalg.inv(c))


def two_atom(a, b, name=""):
    return MatrixMeasure(np.array([0.5, 0.5]), np.array([a, b], dtype=float), name=name)


@pytest.fixture(scope="session")
def sl2():
    return shipped_measure("sl2_hyperbolic")


@pytest.fixture(scope="session")
def sl2_rot():
    return two_atom(np.diag([3, 1 / 3]), rotation(np.pi / 7), "sl2_rot")


@pytest.fixture(scope="session")
def shipped_reports():
    """Full reports at ensemble size 10^4 for every shipped measure."""
    out = {}
    for name in shipped_measures():
        out[name] = verify_report(shipped_measure(name), None, ReportParams(seed=3, count=10_000))
    return out
