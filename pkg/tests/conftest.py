import numpy as np
import pytest

ACCEPTANCE_LINES = []


def min_angle(X):
    out = []
    for i in range(3):
        a = X[(i + 1) % 3] - X[i]
        b = X[(i + 2) % 3] - X[i]
        out.append(np.arccos(np.clip(a @ b / np.linalg.norm(a) / np.linalg.norm(b), -1, 1)))
    return min(out)


def random_triangle(rng, min_angle_deg=10.0):
    """Counter-clockwise triangle with every angle above ``min_angle_deg``."""
    while True:
        X = rng.uniform(-1.0, 1.0, (3, 2))
        d = np.cross(np.append(X[1] - X[0], 0), np.append(X[2] - X[0], 0))[2]
        if abs(d) > 1e-3 and min_angle(X) > np.radians(min_angle_deg):
            return X if d > 0 else X[[0, 2, 1]]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
