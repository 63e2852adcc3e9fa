import numpy as np
import pytest

from skillbridge.cnmp import CoupledModel, DemonstrationPair, Trajectory


def random_pair(rng, widths, T, task_id="pair"):
    t = np.linspace(0.0, 1.0, T)
    trajs = {r: Trajectory(r, t, rng.normal(size=(T, d))) for r, d in widths.items()}
    return DemonstrationPair(task_id, trajs, 0.0)


def tiny_model(widths=None, seed=0, d_lat=4, enc=(2,), dec=(3,)):
    widths = widths or {"a": 2, "b": 3}
    return CoupledModel.create(widths, d_lat=d_lat, encoder_hidden=enc, decoder_hidden=dec, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---- acceptance report -----------------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion and fail the test when it fails."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
