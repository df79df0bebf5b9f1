"""
External RLC resonance network and the saturating driver stages.

The closed-form helpers cover the oscillation condition, the power balance
and the steady-state amplitude. ``derivatives`` exposes the same right-hand
side that the compiled simulation kernel integrates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from oscsim import _kernel as K
from oscsim.dac import DacConfig, step_profile

SQUARE_WAVE_K = 2.0 * math.sqrt(2.0) / math.pi


@dataclass(frozen=True)
class TankParams:
    l_osc: float
    c_osc1: float
    c_osc2: float
    r_s: float

    def __post_init__(self):
        errors = []
        if not self.l_osc > 0:
            errors.append(f"l_osc must be > 0 (got {self.l_osc})")
        if not self.r_s >= 0:
            errors.append(f"r_s must be >= 0 (got {self.r_s})")
        if not (self.c_osc1 >= 0 and self.c_osc2 >= 0):
            errors.append("capacitances must be >= 0")
        elif self.c_osc1 == 0 and self.c_osc2 == 0:
            errors.append("c_osc1 and c_osc2 cannot both be zero")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def c_series(self) -> float:
        return self.c_osc1 * self.c_osc2 / (self.c_osc1 + self.c_osc2)

    @property
    def c_mean(self) -> float:
        return 0.5 * (self.c_osc1 + self.c_osc2)

    @property
    def quality_factor(self) -> float:
        return omega(self) * self.l_osc / self.r_s if self.r_s > 0 else math.inf


@dataclass(frozen=True)
class DriverParams:
    i_m: float
    g_lin: float
    v_ref: float = 2.5
    enabled: bool = True
    g_cm: float = 1e-3
    v_cm_range: float = math.inf  # driver off when |v_cm - v_ref| exceeds this

    def __post_init__(self):
        if not self.v_cm_range > 0:
            raise ValueError(f"v_cm_range must be > 0 (got {self.v_cm_range})")
        if self.i_m < 0:
            raise ValueError(f"i_m must be >= 0 (got {self.i_m})")
        if self.enabled and not self.g_lin > 0:
            raise ValueError(f"g_lin must be > 0 for an enabled driver (got {self.g_lin})")


class TankState(NamedTuple):
    v1: float
    v2: float
    i_l: float


def omega(p: TankParams) -> float:
    if p.c_osc1 <= 0 or p.c_osc2 <= 0:
        raise ValueError("resonance needs both capacitors > 0")
    return 1.0 / math.sqrt(p.l_osc * p.c_series)


def resonant_frequency(p: TankParams) -> float:
    return omega(p) / (2.0 * math.pi)


class CriticalGm(NamedTuple):
    g_m0: float
    equal_caps: bool


def critical_gm(p: TankParams) -> CriticalGm:
    """Transconductance that exactly compensates the tank losses.

    Unequal capacitors are replaced by their mean; ``equal_caps`` flags it.
    The three algebraic forms of the condition are checked against each
    other at the resonance of the equal-capacitor network.
    """
    c = p.c_mean
    g = p.r_s * c / p.l_osc
    w2 = 2.0 / (p.l_osc * c)
    alt1 = 2.0 * p.r_s / (w2 * p.l_osc**2)
    alt2 = 0.5 * p.r_s * w2 * c**2
    scale = max(abs(g), 1e-300)
    if abs(alt1 - g) > 1e-9 * scale or abs(alt2 - g) > 1e-9 * scale:
        raise ArithmeticError(f"oscillation-condition forms disagree: {g}, {alt1}, {alt2}")
    return CriticalGm(g, p.c_osc1 == p.c_osc2)


def predicted_amplitude(p: TankParams, i_m: float, k: float = 0.9) -> float:
    """Steady RMS differential voltage 2 k I_M / G_m0."""
    if p.r_s == 0:
        raise ValueError("lossless tank: steady amplitude is unbounded")
    if not 0 < k <= 1:
        raise ValueError(f"k must be in (0, 1], got {k}")
    if i_m < 0:
        raise ValueError("i_m must be >= 0")
    return 2.0 * k * i_m / critical_gm(p).g_m0


def predicted_amplitude_step(v: float, code: int, cfg: DacConfig = DacConfig()) -> float:
    if v < 0:
        raise ValueError("amplitude must be >= 0")
    if code == 0:
        raise ValueError("relative step undefined at code 0")
    return v * step_profile(cfg)[code]


def dissipated_power(v_rms_diff: float, p: TankParams) -> float:
    return 0.5 * critical_gm(p).g_m0 * v_rms_diff**2


def delivered_power(v_rms_diff: float, i_m: float, k: float = 0.9) -> float:
    return k * v_rms_diff * i_m


def driver_current(v_pin: float, v_cm: float, d: DriverParams) -> float:
    if not d.enabled or abs(v_cm - d.v_ref) > d.v_cm_range:
        return 0.0
    return K.driver_current(v_pin, v_cm, d.g_lin, d.i_m)


def param_row(p: TankParams, d: DriverParams, c_parasitic: float = 10e-12) -> np.ndarray:
    """Kernel parameter row for a healthy, powered system with no rails."""
    row = np.zeros(K.NP)
    row[K.P_L] = p.l_osc
    row[K.P_C1] = p.c_osc1 if p.c_osc1 > 0 else c_parasitic
    row[K.P_C2] = p.c_osc2 if p.c_osc2 > 0 else c_parasitic
    row[K.P_RS] = p.r_s
    row[K.P_GLIN] = d.g_lin
    row[K.P_IM] = d.i_m
    row[K.P_VREF] = d.v_ref
    row[K.P_GCM] = d.g_cm
    row[K.P_CMR] = d.v_cm_range
    row[K.P_POWERED] = 1.0
    row[K.P_DRIVER_EN] = 1.0 if d.enabled else 0.0
    row[K.P_ROPEN] = 10e6
    row[K.P_RSHORT] = 1.0
    row[K.P_RAIL_LO] = -math.inf
    row[K.P_RAIL_HI] = math.inf
    row[K.P_TAU_RECT] = 20e-6
    row[K.P_TAU_MID] = 20e-6
    row[K.P_TAU_ASYM] = 50e-6
    row[K.P_UP_VPOS] = 1.5
    row[K.P_UP_VNEG] = -1.5
    row[K.P_UP_ILEAK] = 1e-6
    row[K.P_UP_RON] = 100.0
    return K.finalize_row(row)


PinModel = Callable[[float], float]


def derivatives(
    s: TankState,
    p: TankParams,
    d: DriverParams,
    pin_models: Optional[tuple[Optional[PinModel], Optional[PinModel]]] = None,
) -> TankState:
    """Time derivative of (v1, v2, i_l).

    ``pin_models`` are optional callables giving extra current injected into
    LC1 / LC2 as a function of that pin's voltage.
    """
    P = param_row(p, d)[None, :]
    x = np.zeros(K.NS)
    x[K.X_V1], x[K.X_V2], x[K.X_IL] = s
    x[K.X_VDC] = x[K.X_VR1] = d.v_ref
    i_ext = np.zeros((1, 2))
    if pin_models is not None:
        for j, f in enumerate(pin_models):
            if f is not None:
                i_ext[0, j] = f(s[j])
    dx = np.empty(K.NS)
    K.rhs(x, P, 1, 0.0, np.ones(1), i_ext, dx)
    return TankState(dx[K.X_V1], dx[K.X_V2], dx[K.X_IL])


def stored_energy(s: TankState, p: TankParams) -> float:
    return 0.5 * p.l_osc * s.i_l**2 + 0.5 * p.c_osc1 * s.v1**2 + 0.5 * p.c_osc2 * s.v2**2


def chip_power(s: TankState, d: DriverParams) -> float:
    """Instantaneous power the chip pins deliver into the network."""
    v_cm = 0.5 * (s.v1 + s.v2)
    i_cm = -d.g_cm * (v_cm - d.v_ref)
    i1 = driver_current(s.v1, v_cm, d) + i_cm
    i2 = driver_current(s.v2, v_cm, d) + i_cm
    return i1 * s.v1 + i2 * s.v2
