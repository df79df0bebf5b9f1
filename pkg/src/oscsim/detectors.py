"""
Safety detectors: missing oscillation, low amplitude, pin asymmetry.

These scalar functions define the detector semantics; the simulation kernel
runs the same logic once per integration step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from oscsim.regulation import rectified_setpoint

F_MIN = 2e6


@dataclass(frozen=True)
class DetectorConfig:
    enabled: bool = True
    t_timeout: float = 5e-6
    hysteresis: float = 5e-3
    low_fraction: float = 0.5
    n_low: int = 3
    asym_fraction: float = 0.1
    tau_asym: float = 50e-6
    persist_factor: float = 3.0

    def v_low(self, setpoint_vpp: float) -> float:
        """Threshold on V_DC1 - V_R1."""
        return self.low_fraction * rectified_setpoint(setpoint_vpp)

    def v_asym(self, setpoint_vpp: float) -> float:
        """Threshold on the demodulated midpoint, relative to per-pin peak swing."""
        return self.asym_fraction * setpoint_vpp / 4.0

    @property
    def persistence(self) -> float:
        return self.persist_factor * self.tau_asym

    def problems(self) -> list[str]:
        out = []
        if not self.t_timeout > 1.0 / F_MIN:
            out.append(f"detectors.t_timeout must exceed one period at 2 MHz ({1 / F_MIN:g} s)")
        if self.hysteresis < 0:
            out.append("detectors.hysteresis must be >= 0")
        if self.low_fraction < 0 or self.asym_fraction < 0:
            out.append("detectors.low_fraction and asym_fraction must be >= 0")
        if self.n_low < 1 or int(self.n_low) != self.n_low:
            out.append("detectors.n_low must be a positive integer")
        if not self.tau_asym > 0:
            out.append("detectors.tau_asym must be > 0")
        if self.persist_factor < 0:
            out.append("detectors.persist_factor must be >= 0")
        return out


@dataclass(frozen=True)
class DetectorFlags:
    missing_osc: Optional[float] = None
    low_amplitude: Optional[float] = None
    asymmetry: Optional[float] = None

    def raised(self) -> dict[str, float]:
        return {k: v for k, v in self.as_dict().items() if v is not None}

    def as_dict(self) -> dict[str, Optional[float]]:
        return {"missing_osc": self.missing_osc, "low_amplitude": self.low_amplitude,
                "asymmetry": self.asymmetry}

    @property
    def forces_max_current(self) -> bool:
        return self.missing_osc is not None or self.low_amplitude is not None


def clock_extract(v1: float, v2: float, level: bool, hysteresis: float = 5e-3) -> bool:
    """Schmitt comparator between the pins; thresholds at +/- hysteresis."""
    vd = v1 - v2
    if not level and vd > hysteresis:
        return True
    if level and vd < -hysteresis:
        return False
    return level


def watchdog(edge_times: Sequence[float], t_timeout: float, now: float,
             t_start: float = 0.0) -> Optional[float]:
    """Time the missing-clock flag was first raised at or before ``now``."""
    last = t_start
    for e in edge_times:
        if e > now:
            break
        if e - last > t_timeout:
            return last + t_timeout
        last = e
    if now - last > t_timeout:
        return last + t_timeout
    return None


def low_amplitude(v_dc1: float, v_r1: float, v_low: float) -> bool:
    return (v_dc1 - v_r1) < v_low


class LowAmplitudeMonitor:
    """Tick-sampled low-amplitude check with an N-consecutive latch."""

    def __init__(self, v_low: float, n_low: int = 3):
        self.v_low = v_low
        self.n_low = n_low
        self.count = 0
        self.t_flag: Optional[float] = None

    def update(self, v_dc1: float, v_r1: float, t: float) -> bool:
        if self.t_flag is not None:
            return True
        self.count = self.count + 1 if low_amplitude(v_dc1, v_r1, self.v_low) else 0
        if self.count >= self.n_low:
            self.t_flag = t
        return self.t_flag is not None


@dataclass(frozen=True)
class AsymmetryState:
    filtered: float = 0.0
    above_since: Optional[float] = None
    t_flag: Optional[float] = None


def asymmetry_detect(v_mid_ac: float, clock: bool, state: AsymmetryState, dt: float,
                     t: float, v_asym: float, tau_asym: float = 50e-6,
                     persistence: float = 150e-6) -> AsymmetryState:
    """Synchronous demodulation of the midpoint AC against the pin clock."""
    demod = v_mid_ac if clock else -v_mid_ac
    filtered = state.filtered + (demod - state.filtered) * -math.expm1(-dt / tau_asym)
    if state.t_flag is not None:
        return AsymmetryState(filtered, state.above_since, state.t_flag)
    if abs(filtered) > v_asym:
        since = t if state.above_since is None else state.above_since
        flag = t if t - since >= persistence else None
        return AsymmetryState(filtered, since, flag)
    return AsymmetryState(filtered, None, None)
