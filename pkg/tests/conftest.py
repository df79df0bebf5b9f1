import time

import pytest

from oscsim import campaign
from oscsim.scenario import Scenario

import support


class FmeaRun(dict):
    elapsed = 0.0


@pytest.fixture(scope="session")
def fmea_results():
    """The built-in fault matrix on the default scenario, run once per session."""
    t0 = time.perf_counter()
    out = FmeaRun((r.row.name, r) for r in campaign.fmea(Scenario(), threads=0))
    out.elapsed = time.perf_counter() - t0
    return out


def pytest_terminal_summary(terminalreporter):
    if not support.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(support.ACCEPTANCE):
        terminalreporter.write_line(support.ACCEPTANCE[n])
