"""
7-bit segmented exponential current-limitation DAC.

The code is split into a 3-bit segment number and a 4-bit mantissa B.
Each segment maps to a prescaler setting (OscD), a Gm-stage pattern (OscE)
and a shift of B into the binary mirror bus (OscF). All coding is done in
integer units of ``i_unit``; amperes appear only at the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

N_CODES = 128
FULL_SCALE_UNITS = 1984

# (oscD, oscE, shift of B into oscF) per segment
SEGMENT_BUSES = (
    (0, 0b0000, 0),
    (0, 0b0001, 0),
    (1, 0b0001, 0),
    (1, 0b0011, 1),
    (3, 0b0011, 1),
    (3, 0b0111, 2),
    (7, 0b0111, 2),
    (7, 0b1111, 3),
)

# (range min, step) in units per segment, transcribed from the coding table
SEGMENT_RANGES = (
    (0, 1),
    (16, 1),
    (32, 2),
    (64, 4),
    (128, 8),
    (256, 16),
    (512, 32),
    (1024, 64),
)

LEGAL_OSC_E = (0b0000, 0b0001, 0b0011, 0b0111, 0b1111)


class ControlBuses(NamedTuple):
    osc_d: int
    osc_e: int
    osc_f: int

    @property
    def active_gm_stages(self) -> int:
        return self.osc_e % 2 + self.osc_e // 2 + 1

    def bits(self) -> tuple[str, str, str]:
        return f"{self.osc_d:03b}", f"{self.osc_e:04b}", f"{self.osc_f:07b}"


@dataclass(frozen=True)
class DacConfig:
    """LSB weight and optional per-code additive error (integer units)."""

    i_unit: float = 12.5e-6
    dnl_injection: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.i_unit > 0:
            raise ValueError(f"i_unit must be > 0, got {self.i_unit}")
        pairs = tuple((int(c), int(e)) for c, e in self.dnl_injection)
        for c, _ in pairs:
            _check_code(c)
        object.__setattr__(self, "dnl_injection", pairs)

    def dnl_units(self, code: int) -> int:
        return sum(e for c, e in self.dnl_injection if c == code)


def _check_code(code) -> int:
    if isinstance(code, bool) or int(code) != code or not 0 <= code < N_CODES:
        raise ValueError(f"DAC code must be an integer in [0, 127], got {code!r}")
    return int(code)


def segment_of(code: int) -> int:
    return _check_code(code) >> 4


def decompose(code: int) -> ControlBuses:
    code = _check_code(code)
    seg, b = code >> 4, code & 0xF
    osc_d, osc_e, shift = SEGMENT_BUSES[seg]
    return ControlBuses(osc_d, osc_e, b << shift)


def validate_buses(buses: ControlBuses) -> None:
    osc_d, osc_e, osc_f = buses
    if osc_e not in LEGAL_OSC_E:
        raise ValueError(f"illegal OscE pattern {osc_e:04b}")
    if not 0 <= osc_f < 128:
        raise ValueError(f"OscF out of range: {osc_f}")
    rows = [i for i, row in enumerate(SEGMENT_BUSES) if row[:2] == (osc_d, osc_e)]
    if not rows:
        raise ValueError(f"(OscD, OscE) = ({osc_d:03b}, {osc_e:04b}) is not a table row")
    shift = SEGMENT_BUSES[rows[0]][2]
    if osc_f & ((1 << shift) - 1):
        raise ValueError(f"OscF low {shift} bits must be zero in segment {rows[0]}")


def bus_units(buses: ControlBuses) -> int:
    """Output current in units: (1 + OscD) * (OscF + 16 * (OscE mod 2 + OscE div 2))."""
    osc_d, osc_e, osc_f = buses
    return (1 + osc_d) * (osc_f + 16 * (osc_e % 2 + osc_e // 2))


def bus_current(buses: ControlBuses, cfg: DacConfig = DacConfig()) -> float:
    validate_buses(buses)
    return bus_units(buses) * cfg.i_unit


def ideal_units(code: int) -> int:
    """Closed-form segment_min + B * segment_step."""
    code = _check_code(code)
    lo, step = SEGMENT_RANGES[code >> 4]
    return lo + (code & 0xF) * step


def limit_units(code: int, cfg: DacConfig = DacConfig()) -> int:
    return bus_units(decompose(code)) + cfg.dnl_units(code)


def limit_current(code: int, cfg: DacConfig = DacConfig()) -> float:
    return limit_units(code, cfg) * cfg.i_unit


def units_table(cfg: DacConfig = DacConfig()) -> np.ndarray:
    return np.array([limit_units(n, cfg) for n in range(N_CODES)], dtype=np.int64)


def ideal_exponential(n: int, i0: float, delta: float) -> float:
    return i0 * (1.0 + delta) ** n


@dataclass(frozen=True)
class StepProfile:
    codes: np.ndarray
    delta: np.ndarray

    def __getitem__(self, code: int) -> float:
        if not 1 <= code <= 126:
            raise KeyError(f"relative step defined for codes 1..126, got {code}")
        return float(self.delta[code - 1])


def step_profile(cfg: DacConfig = DacConfig()) -> StepProfile:
    units = units_table(cfg).astype(float)
    codes = np.arange(1, 127)
    delta = (units[codes + 1] - units[codes]) / units[codes]
    return StepProfile(codes, delta)


def nonmonotonic_codes(cfg: DacConfig = DacConfig()) -> list[int]:
    """Codes n whose current does not exceed that of n - 1."""
    units = units_table(cfg)
    return [n for n in range(1, N_CODES) if units[n] <= units[n - 1]]


@dataclass(frozen=True)
class ExponentialFit:
    i0: float
    delta: float
    max_rel_dev: float


def fit_exponential(cfg: DacConfig = DacConfig(), lo: int = 16, hi: int = 127) -> ExponentialFit:
    """Least-squares fit of log I(n) against n; reports the worst PWL deviation."""
    n = np.arange(lo, hi + 1)
    current = np.array([limit_current(int(c), cfg) for c in n])
    slope, intercept = np.polyfit(n, np.log(current), 1)
    i0, delta = math.exp(intercept), math.expm1(slope)
    model = i0 * (1.0 + delta) ** n
    return ExponentialFit(i0, delta, float(np.max(np.abs(current / model - 1.0))))


def dac_rows(cfg: DacConfig = DacConfig()) -> list[dict]:
    """One record per code, as emitted by the dac-table command."""
    prof = step_profile(cfg)
    rows = []
    for n in range(N_CODES):
        buses = decompose(n)
        d, e, f = buses.bits()
        units = limit_units(n, cfg)
        rows.append({
            "code": n,
            "oscD": d,
            "oscE": e,
            "oscF": f,
            "gm_stages": buses.active_gm_stages,
            "units": units,
            "amperes": units * cfg.i_unit,
            "delta_percent": prof[n] * 100.0 if 1 <= n <= 126 else None,
        })
    return rows
