"""
Fault injection, the unsupplied-driver pin model and the coupled dual system.

Faults are pure transforms: ``apply_fault`` takes the healthy network and
pin conditions of one system and returns the faulted ones.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from oscsim import _kernel as K
from oscsim.tank import DriverParams, TankParams, TankState, param_row

C_PARASITIC = 10e-12
R_OPEN_COIL = 10e6
R_PIN_SHORT = 1.0


class FaultKind(str, enum.Enum):
    NONE = "none"
    OPEN_COIL = "open_coil"
    DEGRADED_Q = "degraded_q"
    MISSING_C1 = "missing_c1"
    MISSING_C2 = "missing_c2"
    SUPPLY_LOSS = "supply_loss"
    PIN_SHORT_TO_GROUND = "pin_short_to_ground"
    PIN_SHORT_TO_SUPPLY = "pin_short_to_supply"

    @classmethod
    def parse(cls, text: str) -> "FaultKind":
        key = text.strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown fault kind {text!r} (expected one of: {names})") from None


@dataclass(frozen=True)
class FaultScenario:
    kind: FaultKind = FaultKind.NONE
    t_activate: float = 0.0
    multiplier: float = 20.0
    pin: int = 1
    system: str = "a"

    def __post_init__(self):
        object.__setattr__(self, "kind", FaultKind(self.kind))
        errors = []
        if self.kind is FaultKind.DEGRADED_Q and not self.multiplier > 1:
            errors.append(f"degraded_q multiplier must be > 1 (got {self.multiplier})")
        if self.pin not in (1, 2):
            errors.append(f"fault pin must be 1 or 2 (got {self.pin})")
        if self.system not in ("a", "b"):
            errors.append(f"fault system must be 'a' or 'b' (got {self.system!r})")
        if self.t_activate < 0:
            errors.append("t_activate must be >= 0")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def label(self) -> str:
        if self.kind is FaultKind.DEGRADED_Q:
            return f"degraded_q({self.multiplier:g})"
        if self.kind is FaultKind.SUPPLY_LOSS:
            return f"supply_loss({self.system})"
        if self.kind in (FaultKind.PIN_SHORT_TO_GROUND, FaultKind.PIN_SHORT_TO_SUPPLY):
            return f"{self.kind.value}(lc{self.pin})"
        return self.kind.value


@dataclass(frozen=True)
class FaultState:
    """Pin-level conditions of one system that are not tank component values."""

    open_coil: bool = False
    short_pin: int = 0
    short_to_supply: bool = False
    supply_lost: bool = False


def apply_fault(tank: TankParams, fault: FaultScenario,
                state: FaultState = FaultState()) -> tuple[TankParams, FaultState]:
    kind = fault.kind
    if kind is FaultKind.NONE:
        return tank, state
    if kind is FaultKind.OPEN_COIL:
        return tank, replace(state, open_coil=True)
    if kind is FaultKind.DEGRADED_Q:
        return replace(tank, r_s=tank.r_s * fault.multiplier), state
    if kind is FaultKind.MISSING_C1:
        return replace(tank, c_osc1=C_PARASITIC), state
    if kind is FaultKind.MISSING_C2:
        return replace(tank, c_osc2=C_PARASITIC), state
    if kind is FaultKind.SUPPLY_LOSS:
        return tank, replace(state, supply_lost=True)
    if kind is FaultKind.PIN_SHORT_TO_GROUND:
        return tank, replace(state, short_pin=fault.pin, short_to_supply=False)
    if kind is FaultKind.PIN_SHORT_TO_SUPPLY:
        return tank, replace(state, short_pin=fault.pin, short_to_supply=True)
    raise ValueError(f"unknown fault kind {kind!r}")


@dataclass(frozen=True)
class UnsuppliedPinModel:
    v_pos_clamp: float = 1.5
    v_neg_clamp: float = -1.5
    i_leak_max: float = 1e-6
    r_on_clamp: float = 100.0

    def __post_init__(self):
        if not self.v_neg_clamp < 0 < self.v_pos_clamp:
            raise ValueError("clamps must satisfy v_neg_clamp < 0 < v_pos_clamp")
        if self.i_leak_max < 0 or not self.r_on_clamp > 0:
            raise ValueError("i_leak_max must be >= 0 and r_on_clamp > 0")


# output-stage variants: plain CMOS with bulk diodes, extra series PMOS,
# and the bulk-switching stage that blocks both polarities
UNSUPPLIED_PRESETS = {
    "fig10a": UnsuppliedPinModel(v_pos_clamp=0.6, v_neg_clamp=-0.6, i_leak_max=1e-6, r_on_clamp=100.0),
    "fig10b": UnsuppliedPinModel(v_pos_clamp=0.6, v_neg_clamp=-1.5, i_leak_max=1e-6, r_on_clamp=100.0),
    "fig11": UnsuppliedPinModel(),
}


def unsupplied_pin_current(v_pin: float, m: UnsuppliedPinModel = UnsuppliedPinModel()) -> float:
    return K.unsupplied_pin_current(v_pin, m.v_pos_clamp, m.v_neg_clamp, m.i_leak_max, m.r_on_clamp)


def system_row(tank: TankParams, driver: DriverParams, state: FaultState = FaultState(),
               unsupplied: UnsuppliedPinModel = UnsuppliedPinModel(),
               vdd: float = 5.0, v_diode: Optional[float] = None) -> np.ndarray:
    """Kernel parameter row for one system under the given pin conditions.

    ``v_diode`` enables the supply/ground protection clamps of a powered
    chip at ``-v_diode`` and ``vdd + v_diode``.
    """
    row = param_row(tank, driver, C_PARASITIC)
    row[K.P_ROPEN] = R_OPEN_COIL
    row[K.P_RSHORT] = R_PIN_SHORT
    row[K.P_POWERED] = 0.0 if state.supply_lost else 1.0
    row[K.P_OPEN] = 1.0 if state.open_coil else 0.0
    row[K.P_SHORT_PIN] = float(state.short_pin)
    row[K.P_SHORT_V] = vdd if state.short_to_supply else 0.0
    if v_diode is not None:
        row[K.P_RAIL_LO] = -v_diode
        row[K.P_RAIL_HI] = vdd + v_diode
    row[K.P_UP_VPOS] = unsupplied.v_pos_clamp
    row[K.P_UP_VNEG] = unsupplied.v_neg_clamp
    row[K.P_UP_ILEAK] = unsupplied.i_leak_max
    row[K.P_UP_RON] = unsupplied.r_on_clamp
    return K.finalize_row(row)


@dataclass(frozen=True)
class DualSystemParams:
    tank_a: TankParams
    tank_b: TankParams
    driver_a: DriverParams
    driver_b: DriverParams
    k_c: float = 0.2
    unsupplied: UnsuppliedPinModel = field(default_factory=UnsuppliedPinModel)

    def __post_init__(self):
        if not 0 < self.k_c < 1:
            raise ValueError(f"coupling k_c must be in (0, 1), got {self.k_c}")

    @property
    def mutual_inductance(self) -> float:
        return self.k_c * math.sqrt(self.tank_a.l_osc * self.tank_b.l_osc)

    def inductance_matrix(self) -> np.ndarray:
        m = self.mutual_inductance
        return np.array([[self.tank_a.l_osc, m], [m, self.tank_b.l_osc]])


def dual_derivatives(a: TankState, b: TankState, dual: DualSystemParams,
                     faults: tuple[FaultState, FaultState] = (FaultState(), FaultState()),
                     ) -> tuple[TankState, TankState]:
    P = np.stack([
        system_row(dual.tank_a, dual.driver_a, faults[0], dual.unsupplied),
        system_row(dual.tank_b, dual.driver_b, faults[1], dual.unsupplied),
    ])
    x = np.zeros(2 * K.NS)
    for s, (st, d) in enumerate(((a, dual.driver_a), (b, dual.driver_b))):
        o = s * K.NS
        x[o + K.X_V1], x[o + K.X_V2], x[o + K.X_IL] = st
        x[o + K.X_VDC] = x[o + K.X_VR1] = d.v_ref
    dx = np.empty(2 * K.NS)
    K.rhs(x, P, 2, dual.mutual_inductance, np.ones(2), np.zeros((2, 2)), dx)
    return (TankState(dx[K.X_V1], dx[K.X_V2], dx[K.X_IL]),
            TankState(dx[K.NS + K.X_V1], dx[K.NS + K.X_V2], dx[K.NS + K.X_IL]))
