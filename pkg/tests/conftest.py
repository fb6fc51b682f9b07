import numpy as np
import pytest

from gru_ntm.tensor import Rng


def central_diff(f, arr, eps=1e-5):
    """Numeric gradient of scalar ``f()`` with respect to every entry of ``arr`` (mutated in place)."""
    flat = arr.reshape(-1)
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2 * eps)
    return out.reshape(arr.shape)


def max_rel_error(a, b):
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


@pytest.fixture
def rng():
    return Rng(1234)


# acceptance criteria append "PASS/FAIL <n> ..." lines here
CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
