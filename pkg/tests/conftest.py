import math

import pytest

from isbsim.core import DriveParams, tube_thermal_2d, tube_trap_2d, scattering_length
from isbsim.thermal import ThermalLineshapeConfig


def tube_config(a_over_a0=-280.0, eta=0.07, rabi_hz=6.25, s=1.0, **kw):
    """Central 2D tube at 4.5 uK with the quoted probe."""
    return ThermalLineshapeConfig.from_scattering_length(
        scattering_length(a_over_a0), tube_trap_2d(eta), tube_thermal_2d(),
        DriveParams(2 * math.pi * rabi_hz, s), **kw)


@pytest.fixture
def tube_cfg():
    return tube_config()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
