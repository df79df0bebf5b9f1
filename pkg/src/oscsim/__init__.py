"""Behavioral simulator of a digitally amplitude-regulated LC oscillator driver."""

from oscsim.dac import DacConfig, decompose, limit_current, step_profile
from oscsim.tank import DriverParams, TankParams, TankState
from oscsim.sim import SimConfig, Trace, measure, run

__all__ = [
    "DacConfig",
    "DriverParams",
    "SimConfig",
    "TankParams",
    "TankState",
    "Trace",
    "decompose",
    "limit_current",
    "measure",
    "run",
    "step_profile",
]

__version__ = "0.1.0"
