"""
Digital amplitude regulation: rectifier/filter, window comparator, code FSM.

Amplitudes enter the loop as the rectified deviation ``V_DC1 - V_R1``. For
a sinusoidal differential swing of ``vpp`` (peak-to-peak, between the pins)
each pin swings ``vpp / 4`` and the full-wave mean is ``vpp / (2 pi)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from oscsim.dac import N_CODES

V_BANDGAP = 1.20
POWER_ON_CODE = 105
MAX_STEP = 1.0 / 16.0


class Comparison(enum.IntEnum):
    BELOW = -1
    INSIDE = 0
    ABOVE = 1


def rectified_setpoint(vpp: float) -> float:
    return vpp / (2.0 * math.pi)


def vpp_from_rms(v_rms: float) -> float:
    return 2.0 * math.sqrt(2.0) * v_rms


@dataclass(frozen=True)
class RegulationConfig:
    enabled: bool = True
    setpoint_vpp: float = 2.7
    window_low: float = 0.04
    window_high: float = 0.04
    v_bg: float = V_BANDGAP
    tick_period: float = 1e-3
    power_on_code: int = POWER_ON_CODE
    nvm_code: int = 40
    t_nvm: float = 5e-6
    tau_rect: float = 20e-6
    tau_mid: float = 20e-6

    @property
    def alphas(self) -> tuple[float, float]:
        d = rectified_setpoint(self.setpoint_vpp)
        return (1.0 - self.window_low) * d / self.v_bg, (1.0 + self.window_high) * d / self.v_bg

    def refs(self, v_r1: float) -> "WindowRefs":
        a_lo, a_hi = self.alphas
        return WindowRefs(v_r1 + a_lo * self.v_bg, v_r1 + a_hi * self.v_bg, v_r1)

    def problems(self) -> list[str]:
        out = []
        if not self.setpoint_vpp > 0:
            out.append("regulation.setpoint_vpp must be > 0")
        if not (0 <= self.window_low < 1 and self.window_high >= 0):
            out.append("regulation.window_low must be in [0, 1) and window_high >= 0")
        elif self.setpoint_vpp > 0:
            width = self.refs(0.0).relative_width
            if not width > MAX_STEP:
                out.append(
                    f"regulation window relative width {width:.4f} is not wider than the "
                    f"maximum regulation step {MAX_STEP:.4f} (window_low + window_high)")
        if not self.v_bg > 0:
            out.append("regulation.v_bg must be > 0")
        if not self.tick_period > 0:
            out.append("regulation.tick_period must be > 0")
        for name in ("power_on_code", "nvm_code"):
            v = getattr(self, name)
            if int(v) != v or not 0 <= v < N_CODES:
                out.append(f"regulation.{name} must be an integer code in [0, 127]")
        if self.t_nvm < 0:
            out.append("regulation.t_nvm must be >= 0")
        if not (self.tau_rect > 0 and self.tau_mid > 0):
            out.append("regulation.tau_rect and tau_mid must be > 0")
        return out


@dataclass(frozen=True)
class WindowRefs:
    v_r3: float
    v_r4: float
    v_r1: float = 0.0

    @property
    def relative_width(self) -> float:
        centre = 0.5 * (self.v_r3 + self.v_r4) - self.v_r1
        return (self.v_r4 - self.v_r3) / centre


def window_compare(v_dc1: float, refs: WindowRefs) -> Comparison:
    # closed window: equality counts as inside
    if v_dc1 < refs.v_r3:
        return Comparison.BELOW
    if v_dc1 > refs.v_r4:
        return Comparison.ABOVE
    return Comparison.INSIDE


@dataclass(frozen=True)
class RegulatorState:
    code: int
    rect_filter_state: float
    midpoint_filter_state: float
    fault_latched: bool = False
    nvm_code: int = 40

    def __post_init__(self):
        if not 0 <= self.code < N_CODES:
            raise ValueError(f"code out of range: {self.code}")


def rectify_filter(v1: float, v2: float, state: RegulatorState, dt: float,
                   tau_rect: float = 20e-6, tau_mid: float = 20e-6) -> RegulatorState:
    """One zero-order-hold update of the rectifier and midpoint low-passes."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    a_rect = -math.expm1(-dt / tau_rect)
    a_mid = -math.expm1(-dt / tau_mid)
    v_dc1 = state.rect_filter_state + (max(v1, v2) - state.rect_filter_state) * a_rect
    v_r1 = state.midpoint_filter_state + (0.5 * (v1 + v2) - state.midpoint_filter_state) * a_mid
    return replace(state, rect_filter_state=v_dc1, midpoint_filter_state=v_r1)


def tick(state: RegulatorState, comparison: Comparison) -> RegulatorState:
    if state.fault_latched:
        return replace(state, code=N_CODES - 1)
    if comparison is Comparison.BELOW:
        code = min(state.code + 1, N_CODES - 1)
    elif comparison is Comparison.ABOVE:
        code = max(state.code - 1, 0)
    else:
        code = state.code
    return replace(state, code=code)


def startup(state: RegulatorState, t: float, t_nvm: float = 5e-6,
            power_on_code: int = POWER_ON_CODE) -> RegulatorState:
    """Power-on reset at t = 0, preset load at t = t_nvm."""
    if t == 0:
        return replace(state, code=power_on_code)
    if t == t_nvm:
        return replace(state, code=state.nvm_code)
    raise ValueError(f"no startup action at t={t}")


def latch_fault(state: RegulatorState) -> RegulatorState:
    return replace(state, fault_latched=True)


@dataclass
class StaticPlantRun:
    codes: list[int]
    comparisons: list[Comparison]

    def first_inside(self) -> int | None:
        for i, c in enumerate(self.comparisons):
            if c is Comparison.INSIDE:
                return i
        return None

    def has_jump_over(self) -> bool:
        """True if the comparator ever flips directly between BELOW and ABOVE
        after having been inside the window."""
        start = self.first_inside()
        if start is None:
            return False
        prev = None
        for c in self.comparisons[start:]:
            if c is Comparison.INSIDE:
                continue
            if prev is not None and c is not prev:
                return True
            prev = c
        return False


def run_static_plant(amplitude_of_code: Callable[[int], float], refs: WindowRefs,
                     start_code: int, n_ticks: int) -> StaticPlantRun:
    """Regulate a memoryless plant whose rectified deviation depends only on code.

    ``comparisons[i]`` is what tick ``i`` saw, ``codes[i]`` the code before it.
    """
    state = RegulatorState(start_code, 0.0, refs.v_r1)
    codes, comps = [], []
    for _ in range(n_ticks):
        cmp = window_compare(refs.v_r1 + amplitude_of_code(state.code), refs)
        codes.append(state.code)
        comps.append(cmp)
        state = tick(state, cmp)
    codes.append(state.code)
    return StaticPlantRun(codes, comps)


def code_changes(codes: Sequence[int]) -> int:
    return sum(1 for a, b in zip(codes, codes[1:]) if a != b)
