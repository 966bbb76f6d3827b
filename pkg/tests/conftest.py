import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_inputs(n, seed=0, hi=1.5e-3, cec=1.1e-3, zero_frac=0.3):
    """Aqueous cations uniform on [0, hi] and exchanger loaded to capacity.

    A fraction of rows gets one or two aqueous cations set exactly to zero.
    """
    rng = np.random.default_rng(seed)
    aq = rng.uniform(0, hi, (n, 3))
    raw = rng.uniform(0, 1, (n, 3))
    sorbed = raw * (cec / (raw @ np.array([1.0, 1.0, 2.0])))[:, None]
    corner = rng.random(n) < zero_frac
    for i in np.flatnonzero(corner):
        k = rng.integers(1, 3)
        aq[i, rng.choice(3, k, replace=False)] = 0.0
    return aq, sorbed


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the run
CRITERIA = {}


def record_criterion(number, title, ok, detail):
    CRITERIA[number] = (title, bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, ok, detail = CRITERIA[number]
        terminalreporter.write_line(
            f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
