"""
Fixed-step RK4 engine with exact discrete events.

The tank, the rectifier/midpoint filters and the asymmetry demodulator share
one state vector and one clock. Integration runs on the global grid
``t_n = n * dt``; a step that straddles an event is split at the event time,
so regulation ticks execute at exactly ``k * tick_period``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional

import numpy as np

from oscsim import _kernel as K
from oscsim.dac import DacConfig, N_CODES, limit_current
from oscsim.detectors import DetectorConfig, DetectorFlags, LowAmplitudeMonitor
from oscsim.faults import (FaultKind, FaultScenario, FaultState, UnsuppliedPinModel,
                           apply_fault, system_row)
from oscsim.regulation import (Comparison, RegulationConfig, RegulatorState, latch_fault,
                               tick, window_compare)
from oscsim.tank import DriverParams, TankParams, critical_gm, resonant_frequency

if TYPE_CHECKING:
    from oscsim.scenario import Scenario

SEED_PERTURBATION = 1e-3


class SimulationError(RuntimeError):
    pass


class NumericAbort(SimulationError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.0  # 0: one resonance period / steps_per_period
    t_end: float = 20e-3
    decimation: int = 20
    seed: int = 0
    measure_window: float = 100e-6
    pin_monitor_from: float = 0.0  # start of the monitored max-pin-current interval
    steps_per_period: int = 500

    def problems(self, tick_period: float) -> list[str]:
        out = []
        if self.dt < 0:
            out.append("sim.dt must be > 0 (or 0 for automatic)")
        elif self.dt > tick_period / 100:
            out.append(f"sim.dt must be <= tick_period/100 = {tick_period / 100:g} s")
        if not self.t_end > 0:
            out.append("sim.t_end must be > 0")
        if self.decimation < 1 or int(self.decimation) != self.decimation:
            out.append("sim.decimation must be an integer >= 1")
        if self.pin_monitor_from < 0:
            out.append("sim.pin_monitor_from must be >= 0")
        if not self.measure_window > 0:
            out.append("sim.measure_window must be > 0")
        if self.steps_per_period < 4:
            out.append("sim.steps_per_period must be >= 4")
        return out


class EventKind(enum.IntEnum):
    # value is the tie-break priority at equal times
    FAULT_ACTIVATE = 0
    NVM_LOAD = 1
    REGULATION_TICK = 2
    END = 3


@dataclass(frozen=True, order=True)
class Event:
    time: float
    kind: EventKind
    payload: Optional[FaultScenario] = field(default=None, compare=False)


def schedule(t_end: float, reg: RegulationConfig, fault: FaultScenario) -> list[Event]:
    events = [Event(t_end, EventKind.END)]
    if fault.kind is not FaultKind.NONE and fault.t_activate <= t_end:
        events.append(Event(fault.t_activate, EventKind.FAULT_ACTIVATE, fault))
    if reg.enabled:
        if reg.t_nvm <= t_end:
            events.append(Event(reg.t_nvm, EventKind.NVM_LOAD))
        n_ticks = math.floor(t_end / reg.tick_period * (1 + 1e-12))
        events.extend(Event(k * reg.tick_period, EventKind.REGULATION_TICK)
                      for k in range(1, n_ticks + 1))
    return sorted(events)


@dataclass
class Measurements:
    rms: float
    peak: float
    frequency: Optional[float]
    mean_abs_i_drv1: float
    code_changes: int = 0
    window: float = 0.0

    def as_dict(self) -> dict:
        return {"rms": self.rms, "peak": self.peak, "frequency": self.frequency,
                "mean_abs_i_drv1": self.mean_abs_i_drv1, "code_changes": self.code_changes,
                "window": self.window}


TRACE_COLUMNS = ("v1", "v2", "v_diff", "i_coil", "i_drv1", "i_drv2", "code", "i_limit_A",
                 "v_dc1", "flag_missing", "flag_lowamp", "flag_asym")


@dataclass
class Trace:
    """Decimated samples per system plus a summary of the undecimated run."""

    t: np.ndarray
    columns: dict[str, dict[str, np.ndarray]]
    summary: dict = field(default_factory=dict)
    code_history: dict[str, list[tuple[float, int]]] = field(default_factory=dict)
    ticks: dict[str, list[tuple[float, int, int]]] = field(default_factory=dict)

    @property
    def systems(self) -> list[str]:
        return list(self.columns)

    def __getitem__(self, key: str) -> np.ndarray:
        name, _, system = key.partition("@")
        return self.columns[system or "a"][name]

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0

    def header(self) -> list[str]:
        cols = ["t"]
        for s in self.systems:
            suffix = "" if s == "a" else f"_{s}"
            cols.extend(c + suffix for c in TRACE_COLUMNS)
        return cols

    def rows(self):
        arrays = [self.t]
        for s in self.systems:
            arrays.extend(self.columns[s][c] for c in TRACE_COLUMNS)
        return zip(*arrays)


INT_COLUMNS = frozenset({"code", "flag_missing", "flag_lowamp", "flag_asym"})


def write_trace_csv(trace: Trace, path) -> None:
    """Locale-independent CSV; floats use the shortest exact round-trip form."""
    arrays = [trace.t]
    fmts = ["%r"]
    for s in trace.systems:
        for c in TRACE_COLUMNS:
            arrays.append(trace.columns[s][c])
            fmts.append("%d" if c in INT_COLUMNS else "%r")
    line = ",".join(fmts) + "\n"
    table = np.column_stack([a.astype(object) for a in arrays]) if len(trace.t) else []
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(trace.header()) + "\n")
        for i in range(0, len(table), 4096):
            fh.write("".join(line % tuple(r) for r in table[i:i + 4096]))


def measure(trace: Trace, window: float, system: str = "a") -> Measurements:
    """RMS/peak/frequency/consumption over the trailing ``window`` of a trace."""
    if window > trace.duration * (1 + 1e-9):
        raise ValueError(f"window {window} exceeds trace duration {trace.duration}")
    t = trace.t
    t0 = t[-1] - window
    sel = t >= t0 - 1e-15
    tw = t[sel]
    cols = trace.columns[system]
    vd = cols["v_diff"][sel]
    if len(tw) > 1:
        rms = math.sqrt(np.trapezoid(vd * vd, tw) / (tw[-1] - tw[0]))
        mean_i = float(np.trapezoid(np.abs(cols["i_drv1"][sel]), tw) / (tw[-1] - tw[0]))
    else:
        rms = float(abs(vd[0])) if len(vd) else 0.0
        mean_i = float(abs(cols["i_drv1"][sel][0])) if len(vd) else 0.0
    return Measurements(
        rms=rms,
        peak=float(np.max(np.abs(vd))) if len(vd) else 0.0,
        frequency=zero_crossing_frequency(tw, vd),
        mean_abs_i_drv1=mean_i,
        code_changes=int(np.count_nonzero(np.diff(cols["code"][sel]))),
        window=window,
    )


def zero_crossing_frequency(t: np.ndarray, v: np.ndarray) -> Optional[float]:
    neg = v < 0
    idx = np.nonzero(neg[:-1] != neg[1:])[0]
    if len(idx) < 4:
        return None
    a, b = v[idx], v[idx + 1]
    tc = t[idx] - (t[idx + 1] - t[idx]) * a / (b - a)
    rising = tc[neg[idx]]
    if len(rising) < 2:
        return None
    return float((len(rising) - 1) / (rising[-1] - rising[0]))


def step_rk4(x: np.ndarray, P: np.ndarray, dt: float, m: float = 0.0,
             clock: Optional[np.ndarray] = None) -> np.ndarray:
    """One RK4 step of the full state vector (tank + filter states)."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    x = np.array(x, dtype=float)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    nsys = P.shape[0]
    n = nsys * K.NS
    sgn = np.ones(nsys) if clock is None else np.where(np.asarray(clock) > 0, 1.0, -1.0)
    work = [np.empty(n) for _ in range(5)]
    K.rk4_step(x, P, nsys, m, sgn, np.zeros((nsys, 2)), dt, *work)
    if not np.all(np.isfinite(x)):
        raise NumericAbort(f"non-finite state after step: {x}")
    return x


def initial_state(v_ref: float, powered: bool = True) -> np.ndarray:
    x = np.zeros(K.NS)
    if powered:
        x[K.X_V1] = v_ref + SEED_PERTURBATION
        x[K.X_V2] = v_ref - SEED_PERTURBATION
        x[K.X_VDC] = v_ref
        x[K.X_VR1] = v_ref
    return x


@dataclass
class _System:
    name: str
    tank: TankParams
    driver: DriverParams
    reg: RegulationConfig
    det: DetectorConfig
    dac: DacConfig
    vdd: float
    v_diode: float
    unsupplied: UnsuppliedPinModel
    fixed_i_m: float
    state: FaultState = field(default_factory=FaultState)
    regulator: RegulatorState = None
    low: LowAmplitudeMonitor = None

    def i_m(self) -> float:
        return self.fixed_i_m if self.fixed_i_m > 0 else limit_current(self.regulator.code, self.dac)

    def row(self, low_flag: bool) -> np.ndarray:
        d = replace(self.driver, i_m=self.i_m())
        r = system_row(self.tank, d, self.state, self.unsupplied, self.vdd, self.v_diode)
        r[K.P_TAU_RECT] = self.reg.tau_rect
        r[K.P_TAU_MID] = self.reg.tau_mid
        r[K.P_TAU_ASYM] = self.det.tau_asym
        r[K.P_HYS] = self.det.hysteresis
        r[K.P_TIMEOUT] = self.det.t_timeout
        r[K.P_VASYM] = self.det.v_asym(self.reg.setpoint_vpp)
        r[K.P_PERSIST] = self.det.persistence
        r[K.P_CODE] = self.regulator.code
        r[K.P_LOWFLAG] = 1.0 if low_flag else 0.0
        r[K.P_DETECT] = 1.0 if self.det.enabled else 0.0
        return K.finalize_row(r)

    @property
    def powered(self) -> bool:
        return not self.state.supply_lost


def _build_systems(sc: "Scenario") -> list[_System]:
    systems = []
    names = ["a", "b"] if sc.dual.enabled else ["a"]
    for name in names:
        tank = sc.network.tank() if name == "a" else sc.dual.tank_b(sc.network)
        reg = sc.regulation if name == "a" else sc.dual.regulation_b(sc.regulation)
        g_lin = sc.driver.g_lin or sc.driver.g_lin_factor * critical_gm(tank).g_m0
        driver = DriverParams(i_m=0.0, g_lin=g_lin, v_ref=sc.driver.v_ref, g_cm=sc.driver.g_cm,
                              v_cm_range=sc.driver.v_cm_range)
        s = _System(name, tank, driver, reg, sc.detectors, sc.dac.config(), sc.driver.vdd,
                    sc.driver.v_diode, sc.fault.unsupplied_model(), sc.driver.i_m)
        s.regulator = RegulatorState(reg.power_on_code, sc.driver.v_ref, sc.driver.v_ref,
                                     nvm_code=reg.nvm_code)
        s.low = LowAmplitudeMonitor(sc.detectors.v_low(reg.setpoint_vpp), sc.detectors.n_low)
        systems.append(s)
    return systems


def resolve_dt(sc: "Scenario") -> float:
    if sc.sim.dt > 0:
        return sc.sim.dt
    return 1.0 / (sc.sim.steps_per_period * resonant_frequency(sc.network.tank()))


def run(sc: "Scenario") -> Trace:
    """Simulate one scenario. Identical scenarios give bit-identical traces."""
    from oscsim.scenario import ConfigError

    problems = sc.problems()
    if problems:
        raise ConfigError(problems)
    systems = _build_systems(sc)
    nsys = len(systems)
    dt = resolve_dt(sc)
    t_end = sc.sim.t_end
    dec = int(sc.sim.decimation)
    m = sc.dual.k_c * math.sqrt(systems[0].tank.l_osc * systems[1].tank.l_osc) if nsys == 2 else 0.0

    x = np.concatenate([initial_state(s.driver.v_ref) for s in systems])
    P = np.stack([s.row(False) for s in systems])
    det = np.zeros((nsys, K.ND))
    det[:, K.D_ASYM_SINCE] = -1.0
    det[:, K.D_MISS_T] = det[:, K.D_ASYM_T] = math.nan
    meas = np.zeros((nsys, K.NM))
    n_grid = math.floor(t_end / dt * (1 + 1e-12))
    n_rec = n_grid // dec + 1
    rec_t = np.empty(n_rec)
    rec = np.empty((n_rec, nsys, K.NR))
    rec_i = 0
    t_meas = t_end - min(sc.sim.measure_window, t_end)

    history = {s.name: [(0.0, s.regulator.code)] for s in systems}
    tick_log = {s.name: [] for s in systems}
    t, n_next = 0.0, 1
    for ev in schedule(t_end, sc.regulation, sc.fault.scenario()):
        if rec_i == 0 and (ev.time > t or ev.kind is EventKind.END):
            # initial sample, after the events scheduled at t = 0
            rec_i = K.record_sample(x, P, nsys, det, rec_t, rec, 0, 0.0)
        if ev.time > t:
            t, n_next, rec_i, status = K.integrate(x, P, nsys, m, t, n_next, ev.time, dt, dec,
                                                   rec_t, rec, rec_i, det, meas, t_meas,
                                                   sc.sim.pin_monitor_from)
            if status != K.STATUS_OK:
                raise NumericAbort(f"non-finite state at t={t:.9g} s (dt={dt:.4g} s)")
        if ev.kind is EventKind.END:
            break
        for i, s in enumerate(systems):
            o = i * K.NS
            old_code = s.regulator.code
            if ev.kind is EventKind.FAULT_ACTIVATE:
                if ev.payload.system != s.name:
                    continue
                s.tank, s.state = apply_fault(s.tank, ev.payload, s.state)
                if s.state.open_coil:
                    x[o + K.X_IL] = 0.0
                if s.state.supply_lost and ev.time == 0.0:
                    x[o:o + K.NS] = initial_state(s.driver.v_ref, powered=False)
            elif not s.powered:
                continue
            elif ev.kind is EventKind.NVM_LOAD:
                s.regulator = replace(s.regulator, code=s.reg.nvm_code)
            elif ev.kind is EventKind.REGULATION_TICK:
                v_dc1, v_r1 = x[o + K.X_VDC], x[o + K.X_VR1]
                cmp = window_compare(v_dc1, s.reg.refs(v_r1))
                if s.det.enabled:
                    s.low.update(v_dc1, v_r1, ev.time)
                    if s.low.t_flag is not None or det[i, K.D_MISS] > 0.5:
                        s.regulator = latch_fault(s.regulator)
                s.regulator = tick(s.regulator, cmp)
                tick_log[s.name].append((ev.time, int(cmp), s.regulator.code))
            if s.regulator.code != old_code:
                history[s.name].append((ev.time, s.regulator.code))
            P[i] = s.row(s.low.t_flag is not None)

    trace = _assemble(systems, rec_t[:rec_i], rec[:rec_i], det, meas, history, tick_log)
    trace.summary.update({"dt": dt, "t_end": t_end, "f_res": resonant_frequency(sc.network.tank()),
                          "ticks": len(tick_log["a"])})
    return trace


def _assemble(systems, rec_t, rec, det, meas, history, tick_log) -> Trace:
    columns, summary = {}, {"systems": {}}
    for i, s in enumerate(systems):
        r = rec[:, i, :]
        columns[s.name] = {
            "v1": r[:, K.R_V1], "v2": r[:, K.R_V2], "v_diff": r[:, K.R_V1] - r[:, K.R_V2],
            "i_coil": r[:, K.R_IL], "i_drv1": r[:, K.R_IDRV1], "i_drv2": r[:, K.R_IDRV2],
            "code": r[:, K.R_CODE].astype(np.int64), "i_limit_A": r[:, K.R_ILIM],
            "v_dc1": r[:, K.R_VDC], "v_r1": r[:, K.R_VR1], "asym": r[:, K.R_ASYM],
            "flag_missing": r[:, K.R_FMISS].astype(np.int64),
            "flag_lowamp": r[:, K.R_FLOW].astype(np.int64),
            "flag_asym": r[:, K.R_FASYM].astype(np.int64),
        }
        mrow = meas[i]
        n_rise = int(mrow[K.M_NRISE])
        span = mrow[K.M_TLAST] - mrow[K.M_TFIRST]
        freq = float((n_rise - 1) / span) if mrow[K.M_NCROSS] >= 4 and n_rise >= 2 and span > 0 else None
        sumt = mrow[K.M_SUMT]
        codes_in_window = 0
        m_start = rec_t[-1] - sumt if len(rec_t) else 0.0
        codes_in_window = sum(1 for tc, _ in history[s.name][1:] if tc > m_start)
        flags = DetectorFlags(
            missing_osc=_opt(det[i, K.D_MISS_T]) if det[i, K.D_MISS] > 0.5 else None,
            low_amplitude=s.low.t_flag,
            asymmetry=_opt(det[i, K.D_ASYM_T]) if det[i, K.D_ASYM] > 0.5 else None,
        )
        summary["systems"][s.name] = {
            "measurements": Measurements(
                rms=math.sqrt(mrow[K.M_SUMV2] / sumt) if sumt > 0 else 0.0,
                peak=float(mrow[K.M_PEAK]),
                frequency=freq,
                mean_abs_i_drv1=float(mrow[K.M_SUMIDRV] / sumt) if sumt > 0 else 0.0,
                code_changes=codes_in_window,
                window=float(sumt),
            ),
            "flags": flags,
            "final_code": s.regulator.code,
            "fault_latched": s.regulator.fault_latched,
            "powered": s.powered,
            "max_pin_current": float(mrow[K.M_MAXPIN]),
            "max_pin_current_monitored": float(mrow[K.M_MAXPIN_MON]),
            "g_lin": s.driver.g_lin,
            "g_m0": critical_gm(s.tank).g_m0,
        }
    return Trace(rec_t, columns, summary, history, tick_log)


def _opt(v: float) -> Optional[float]:
    return None if math.isnan(v) else float(v)


def summary_document(trace: Trace) -> dict:
    """JSON-compatible view of ``trace.summary``."""
    doc = {k: v for k, v in trace.summary.items() if k != "systems"}
    doc["systems"] = {}
    for name, s in trace.summary["systems"].items():
        doc["systems"][name] = {
            "measurements": s["measurements"].as_dict(),
            "flags": s["flags"].as_dict(),
            "final_code": s["final_code"],
            "fault_latched": s["fault_latched"],
            "powered": s["powered"],
            "max_pin_current": s["max_pin_current"],
            "max_pin_current_monitored": s["max_pin_current_monitored"],
            "g_lin": s["g_lin"],
            "g_m0": s["g_m0"],
            "code_history": [[t, c] for t, c in trace.code_history[name]],
        }
    return doc
