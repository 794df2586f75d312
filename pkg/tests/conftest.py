import os

# numba fixes its thread pool size on import; reserve four so that
# thread-count determinism checks exercise a real parallel schedule.
os.environ.setdefault("NUMBA_NUM_THREADS", "4")
os.environ.setdefault("ORIPERC_THREADS", "4")

import pytest  # noqa: E402

from oriperc.model import ModelParams  # noqa: E402

P_CRIT = 0.6447


def pytest_configure(config):
    # registered here rather than in pyproject: resolving the category imports
    # numba, which must not happen before the thread count above is set
    config.addinivalue_line("filterwarnings", "ignore::numba.core.errors.NumbaWarning")


@pytest.fixture(scope="session")
def p_crit():
    return P_CRIT


@pytest.fixture(scope="session")
def small_critical_run():
    """A short critical ensemble shared by the cheap estimator tests."""
    from oriperc.growth import run_ensemble

    return run_ensemble(ModelParams(1, P_CRIT), 64, 20000, seed=99)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        terminalreporter.write_line(results[key])
