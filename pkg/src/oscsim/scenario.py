"""
Scenario files: INI-style sections, SI units, every key defaulted.

    [network]
    r_s = 0.5
    network.l_osc = 0.5e-6     # dotted keys work outside sections too

Unknown sections or keys are errors. ``parse_scenario`` collects every
violated constraint before raising, so one pass reports all of them.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional

from oscsim.dac import DacConfig
from oscsim.detectors import DetectorConfig
from oscsim.faults import UNSUPPLIED_PRESETS, FaultKind, FaultScenario, UnsuppliedPinModel
from oscsim.regulation import RegulationConfig
from oscsim.sim import SimConfig
from oscsim.tank import TankParams


class ConfigError(ValueError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid scenario:\n  " + "\n  ".join(self.problems))


class ScenarioSyntaxError(ConfigError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__([f"line {lineno}: {message}"])


@dataclass(frozen=True)
class NetworkConfig:
    l_osc: float = 1.5e-6
    c_osc1: float = 3.3e-9
    c_osc2: float = 3.3e-9
    r_s: float = 0.5

    def tank(self) -> TankParams:
        return TankParams(self.l_osc, self.c_osc1, self.c_osc2, self.r_s)

    def problems(self, prefix: str = "network") -> list[str]:
        out = []
        if not self.l_osc > 0:
            out.append(f"{prefix}.l_osc must be > 0")
        if not self.r_s >= 0:
            out.append(f"{prefix}.r_s must be >= 0")
        for name in ("c_osc1", "c_osc2"):
            if not getattr(self, name) > 0:
                out.append(f"{prefix}.{name} must be > 0 (use a missing_c fault for an absent capacitor)")
        return out


@dataclass(frozen=True)
class DriverConfig:
    g_lin_factor: float = 50.0  # g_lin as a multiple of the network's critical Gm
    g_lin: float = 0.0  # absolute slope in S; 0 uses g_lin_factor
    v_ref: float = 2.5
    vdd: float = 5.0
    g_cm: float = 1e-3
    v_cm_range: float = 1.5  # input common-mode range about v_ref, volts
    v_diode: float = 0.6
    i_m: float = 0.0  # fixed current limit in A; 0 follows the DAC code
    k: float = 0.9  # driver shape factor, used only for predictions

    def problems(self) -> list[str]:
        out = []
        if self.g_lin < 0 or (self.g_lin == 0 and not self.g_lin_factor > 0):
            out.append("driver.g_lin must be > 0, or 0 with driver.g_lin_factor > 0")
        if not self.vdd > 0:
            out.append("driver.vdd must be > 0")
        if self.g_cm < 0:
            out.append("driver.g_cm must be >= 0")
        if not self.v_cm_range > 0:
            out.append("driver.v_cm_range must be > 0")
        if self.v_diode < 0:
            out.append("driver.v_diode must be >= 0")
        if self.i_m < 0:
            out.append("driver.i_m must be >= 0")
        if not 0 < self.k <= 1:
            out.append("driver.k must be in (0, 1]")
        return out


@dataclass(frozen=True)
class DacSection:
    i_unit: float = 12.5e-6
    dnl_injection: tuple = ()

    def config(self) -> DacConfig:
        return DacConfig(self.i_unit, self.dnl_injection)

    def problems(self) -> list[str]:
        try:
            self.config()
        except ValueError as exc:
            return [f"dac: {exc}"]
        return []


@dataclass(frozen=True)
class FaultConfig:
    kind: str = "none"
    t_activate: float = 0.0
    multiplier: float = 20.0
    pin: int = 1
    system: str = "a"
    preset: str = "fig11"
    v_pos_clamp: Optional[float] = None
    v_neg_clamp: Optional[float] = None
    i_leak_max: Optional[float] = None
    r_on_clamp: Optional[float] = None

    def scenario(self) -> FaultScenario:
        return FaultScenario(FaultKind.parse(self.kind), self.t_activate, self.multiplier,
                             self.pin, self.system)

    def unsupplied_model(self) -> UnsuppliedPinModel:
        base = UNSUPPLIED_PRESETS[self.preset]
        over = {f: getattr(self, f) for f in ("v_pos_clamp", "v_neg_clamp", "i_leak_max", "r_on_clamp")
                if getattr(self, f) is not None}
        return replace(base, **over)

    def problems(self, t_end: float, dual: bool) -> list[str]:
        out = []
        try:
            sc = self.scenario()
            if sc.kind is not FaultKind.NONE and sc.t_activate > t_end:
                out.append("fault.t_activate must lie within the run duration")
            if sc.system == "b" and not dual:
                out.append("fault.system = b requires dual.enabled = true")
        except ValueError as exc:
            out.append(f"fault: {exc}")
        if self.preset not in UNSUPPLIED_PRESETS:
            out.append(f"fault.preset must be one of {sorted(UNSUPPLIED_PRESETS)}")
        else:
            try:
                self.unsupplied_model()
            except ValueError as exc:
                out.append(f"fault: {exc}")
        return out


@dataclass(frozen=True)
class DualConfig:
    enabled: bool = False
    k_c: float = 0.2
    # system B overrides; unset values are taken from system A
    l_osc: Optional[float] = None
    c_osc1: Optional[float] = None
    c_osc2: Optional[float] = None
    r_s: Optional[float] = None
    nvm_code: Optional[int] = None

    def network_b(self, a: NetworkConfig) -> NetworkConfig:
        over = {f.name: getattr(self, f.name) for f in fields(NetworkConfig)
                if getattr(self, f.name) is not None}
        return replace(a, **over)

    def tank_b(self, a: NetworkConfig) -> TankParams:
        return self.network_b(a).tank()

    def regulation_b(self, reg: RegulationConfig) -> RegulationConfig:
        return reg if self.nvm_code is None else replace(reg, nvm_code=self.nvm_code)

    def problems(self, a: NetworkConfig) -> list[str]:
        out = []
        if not 0 < self.k_c < 1:
            out.append("dual.k_c must be in (0, 1)")
        if self.enabled:
            out.extend(self.network_b(a).problems("dual"))
        if self.nvm_code is not None and not 0 <= self.nvm_code < 128:
            out.append("dual.nvm_code must be in [0, 127]")
        return out


SECTIONS = {
    "network": NetworkConfig,
    "driver": DriverConfig,
    "dac": DacSection,
    "regulation": RegulationConfig,
    "detectors": DetectorConfig,
    "fault": FaultConfig,
    "dual": DualConfig,
    "sim": SimConfig,
}


@dataclass(frozen=True)
class Scenario:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    driver: DriverConfig = field(default_factory=DriverConfig)
    dac: DacSection = field(default_factory=DacSection)
    regulation: RegulationConfig = field(default_factory=RegulationConfig)
    detectors: DetectorConfig = field(default_factory=DetectorConfig)
    fault: FaultConfig = field(default_factory=FaultConfig)
    dual: DualConfig = field(default_factory=DualConfig)
    sim: SimConfig = field(default_factory=SimConfig)

    def problems(self) -> list[str]:
        out = self.network.problems() + self.driver.problems() + self.dac.problems()
        out += self.regulation.problems() + self.detectors.problems()
        out += self.fault.problems(self.sim.t_end, self.dual.enabled)
        out += self.dual.problems(self.network)
        out += self.sim.problems(self.regulation.tick_period)
        if not out and self.sim.dt == 0:
            from oscsim.sim import resolve_dt
            if resolve_dt(self) > self.regulation.tick_period / 100:
                out.append("automatic dt exceeds tick_period/100; set sim.dt")
        return out

    def with_overrides(self, overrides: dict[str, Any]) -> "Scenario":
        sc = self
        for key, value in overrides.items():
            section, name = _split_key(key)
            sub = getattr(sc, section)
            sc = replace(sc, **{section: replace(sub, **{name: value})})
        return sc


def _split_key(key: str) -> tuple[str, str]:
    section, dot, name = key.partition(".")
    if not dot or section not in SECTIONS:
        raise ConfigError([f"unknown key {key!r} (expected section.key, sections: {', '.join(SECTIONS)})"])
    names = {f.name for f in fields(SECTIONS[section])}
    if name not in names:
        raise ConfigError([f"unknown key {key!r} (valid keys in [{section}]: {', '.join(sorted(names))})"])
    return section, name


def _field_type(section: str, name: str) -> str:
    for f in fields(SECTIONS[section]):
        if f.name == name:
            return str(f.type)
    raise KeyError(name)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def convert_value(key: str, text: str) -> Any:
    """Convert the textual value of ``section.key`` to its field type."""
    section, name = _split_key(key)
    ftype = _field_type(section, name)
    text = text.strip()
    if ftype.startswith("Optional") and text.lower() in ("", "none", "same"):
        return None
    base = ftype.removeprefix("Optional[").removesuffix("]")
    try:
        if base == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"expected a boolean, got {text!r}")
        if base == "int":
            v = float(text)
            if v != int(v):
                raise ValueError(f"expected an integer, got {text!r}")
            return int(v)
        if base == "float":
            v = float(text)
            if math.isnan(v):
                raise ValueError("NaN is not allowed")
            return v
        if base == "str":
            return text
        if base == "tuple":
            return parse_dnl(text)
    except ValueError as exc:
        raise ConfigError([f"{key}: {exc}"]) from None
    raise TypeError(f"unsupported field type {ftype} for {key}")


def parse_dnl(text: str) -> tuple[tuple[int, int], ...]:
    """``"96:-40, 100:3"`` -> ((96, -40), (100, 3))."""
    out = []
    for item in text.replace(";", ",").split(","):
        item = item.strip()
        if not item:
            continue
        code, sep, err = item.partition(":")
        if not sep:
            raise ValueError(f"dnl entry {item!r} must look like code:units")
        out.append((int(code), int(err)))
    return tuple(out)


def format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(f"{c}:{e}" for c, e in v)
    return str(v)


def parse_scenario(text: str, overrides: Optional[dict[str, str]] = None) -> Scenario:
    """Parse and validate scenario text; ``overrides`` maps dotted keys to raw strings."""
    values: dict[str, Any] = {}
    problems: list[str] = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioSyntaxError(lineno, f"malformed section header {raw.strip()!r}")
            section = line[1:-1].strip().lower()
            if section not in SECTIONS:
                problems.append(f"line {lineno}: unknown section [{section}]")
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ScenarioSyntaxError(lineno, f"expected 'key = value', got {raw.strip()!r}")
        key = key.strip().lower()
        if "." not in key:
            if section is None:
                raise ScenarioSyntaxError(lineno, f"key {key!r} outside any section (use section.key)")
            key = f"{section}.{key}"
        try:
            values[key] = convert_value(key, value)
        except ConfigError as exc:
            problems.extend(f"line {lineno}: {p}" for p in exc.problems)
    for key, value in (overrides or {}).items():
        try:
            values[key] = convert_value(key, value)
        except ConfigError as exc:
            problems.extend(exc.problems)
    try:
        sc = Scenario().with_overrides(values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(problems + [str(exc)]) from None
    # report syntax-level and constraint problems together
    problems += sc.problems()
    if problems:
        raise ConfigError(problems)
    return sc


def load_scenario(path, overrides: Optional[dict[str, str]] = None) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read(), overrides)


def emit_scenario(sc: Scenario) -> str:
    """Render a fully defaulted scenario; ``parse_scenario`` inverts it."""
    lines = []
    for name in SECTIONS:
        sub = getattr(sc, name)
        lines.append(f"[{name}]")
        for f in fields(sub):
            v = getattr(sub, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {format_value(v)}")
        lines.append("")
    return "\n".join(lines)


def scenario_dict(sc: Scenario) -> dict:
    return {name: dataclasses.asdict(getattr(sc, name)) for name in SECTIONS}
