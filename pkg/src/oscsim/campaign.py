"""
Campaigns: single runs with file output, parameter sweeps and the FMEA matrix.

Member runs share no mutable state, so they may execute on a thread pool
(the compiled kernel releases the GIL). Results are always collected and
written in scenario order, whatever order the runs finish in.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from oscsim.dac import N_CODES
from oscsim.scenario import ConfigError, Scenario, _field_type, _split_key
from oscsim.sim import Trace, run, summary_document, write_trace_csv
from oscsim.tank import resonant_frequency

THREADS_ENV = "OSC_SIM_THREADS"
SWEEP_COLUMNS = ("value", "amplitude_rms", "frequency", "final_code", "mean_driver_current")
DETECTORS = ("missing_osc", "low_amplitude", "asymmetry")
FAIL_SAFE_DETECTORS = ("missing_osc", "low_amplitude")
FAIL_SAFE_CODE = N_CODES - 1


def thread_count() -> int:
    """Worker count from OSC_SIM_THREADS; 0 (or 1) means sequential."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"{THREADS_ENV} must be an integer >= 0 (got {raw!r})"]) from None
    if n < 0:
        raise ConfigError([f"{THREADS_ENV} must be an integer >= 0 (got {raw!r})"])
    return n


def map_ordered(fn: Callable, items: Sequence, threads: Optional[int] = None) -> list:
    n = thread_count() if threads is None else threads
    if n <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


def write_summary(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_run(trace: Trace, out_dir, with_trace: bool = True) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if with_trace:
        write_trace_csv(trace, out / "trace.csv")
    doc = summary_document(trace)
    write_summary(doc, out / "summary.json")
    return doc


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "_", text).strip("_")


# sweeps

@dataclass(frozen=True)
class SweepPoint:
    value: float
    amplitude_rms: float
    frequency: Optional[float]
    final_code: int
    mean_driver_current: float


def sweep_scenarios(base: Scenario, key: str, values: Iterable[float]) -> list[Scenario]:
    section, name = _split_key(key)
    ftype = _field_type(section, name).removeprefix("Optional[").removesuffix("]")
    if ftype not in ("float", "int"):
        raise ConfigError([f"sweep key {key!r} is not numeric (type {ftype})"])
    out, problems = [], []
    for v in values:
        if ftype == "int":
            if v != int(v):
                problems.append(f"{key}: sweep value {v!r} is not an integer")
                continue
            v = int(v)
        sc = base.with_overrides({key: v})
        problems.extend(f"{key}={v!r}: {p}" for p in sc.problems())
        out.append(sc)
    if problems:
        raise ConfigError(problems)
    return out


def sweep(base: Scenario, key: str, values: Sequence[float], out_dir=None,
          with_traces: bool = False, threads: Optional[int] = None) -> list[SweepPoint]:
    scenarios = sweep_scenarios(base, key, values)

    def one(item):
        i, sc = item
        tr = run(sc)
        if out_dir is not None:
            write_run(tr, Path(out_dir) / "runs" / f"{i:03d}_{_slug(f'{key}={values[i]!r}')}", with_traces)
        a = tr.summary["systems"]["a"]
        m = a["measurements"]
        return SweepPoint(float(values[i]), m.rms, m.frequency, a["final_code"], m.mean_abs_i_drv1)

    points = map_ordered(one, list(enumerate(scenarios)), threads)
    if out_dir is not None:
        write_sweep_csv(points, Path(out_dir) / "sweep.csv")
    return points


def write_sweep_csv(points: Sequence[SweepPoint], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for p in points:
            w.writerow([repr(p.value), repr(p.amplitude_rms),
                        "" if p.frequency is None else repr(p.frequency),
                        p.final_code, repr(p.mean_driver_current)])


# FMEA

@dataclass(frozen=True)
class MatrixRow:
    name: str
    kind: str
    pin: int
    system: str
    multiplier: float
    dual: bool
    expected: str
    deadline: str  # "watchdog" or seconds


def parse_matrix(text: str) -> list[MatrixRow]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    rows, problems = [], []
    for i, rec in enumerate(csv.DictReader(lines), 2):
        try:
            row = MatrixRow(rec["name"].strip(), rec["kind"].strip(), int(rec["pin"]),
                            rec["system"].strip(), float(rec["multiplier"]),
                            rec["dual"].strip().lower() == "true", rec["expected"].strip(),
                            rec["deadline"].strip())
        except (KeyError, ValueError, AttributeError, TypeError) as exc:
            problems.append(f"fmea matrix record {i}: {exc}")
            continue
        if row.expected not in DETECTORS + ("none",):
            problems.append(f"fmea matrix record {i}: unknown detector {row.expected!r}")
        if row.deadline != "watchdog":
            try:
                float(row.deadline)
            except ValueError:
                problems.append(f"fmea matrix record {i}: bad deadline {row.deadline!r}")
        rows.append(row)
    if problems:
        raise ConfigError(problems)
    return rows


def builtin_matrix() -> list[MatrixRow]:
    text = resources.files("oscsim").joinpath("data/fmea_matrix.csv").read_text(encoding="utf-8")
    return parse_matrix(text)


@dataclass(frozen=True)
class FmeaPlan:
    t_fault: float = 0.5e-3
    # observation after activation; covers the 5 ms deadline plus two ticks
    observe: float = 7e-3


def fmea_scenario(base: Scenario, row: MatrixRow, plan: FmeaPlan = FmeaPlan()) -> Scenario:
    t_act = 0.0 if row.kind == "none" else plan.t_fault
    sc = base.with_overrides({
        "fault.kind": row.kind, "fault.pin": row.pin, "fault.system": row.system,
        "fault.multiplier": row.multiplier, "fault.t_activate": t_act,
        "dual.enabled": row.dual or base.dual.enabled,
        "sim.t_end": plan.t_fault + plan.observe,
    })
    problems = sc.problems()
    if problems:
        raise ConfigError([f"fmea row {row.name}: {p}" for p in problems])
    return sc


@dataclass(frozen=True)
class FmeaResult:
    row: MatrixRow
    t_activate: float
    flags: dict[str, Optional[float]]
    deadline: Optional[float]  # seconds after activation
    latency: Optional[float]
    fail_safe_code: Optional[int]
    fail_safe_ok: Optional[bool]
    verdict: bool
    reason: str

    @property
    def detected(self) -> bool:
        return self.row.expected != "none" and self.latency is not None and self.latency <= self.deadline


def deadline_seconds(row: MatrixRow, sc: Scenario) -> Optional[float]:
    if row.expected == "none":
        return None
    if row.deadline == "watchdog":
        return sc.detectors.t_timeout + 1.0 / resonant_frequency(sc.network.tank())
    return float(row.deadline)


def evaluate(row: MatrixRow, sc: Scenario, trace: Trace) -> FmeaResult:
    """PASS iff the expected detector fired within its deadline, nothing else
    fired before it, and watchdog/low-amplitude detections reached code 127
    at the first tick after detection."""
    a = trace.summary["systems"]["a"]
    flags = a["flags"].as_dict()
    t_act = sc.fault.t_activate
    deadline = deadline_seconds(row, sc)
    raised = {k: v for k, v in flags.items() if v is not None}
    if row.expected == "none":
        ok = not raised
        reason = "no flags" if ok else "unexpected " + ", ".join(f"{k}@{v:.6g}" for k, v in sorted(raised.items()))
        return FmeaResult(row, t_act, flags, None, None, None, None, ok, reason)

    t_e = flags[row.expected]
    latency = None if t_e is None else t_e - t_act
    problems = []
    if t_e is None:
        problems.append(f"{row.expected} never fired")
    elif latency > deadline:
        problems.append(f"{row.expected} after {latency:.4g} s > deadline {deadline:.4g} s")
    if t_e is not None:
        earlier = [k for k, v in raised.items() if k != row.expected and v < t_e]
        if earlier:
            problems.append("fired first: " + ", ".join(sorted(earlier)))
    else:
        if raised:
            problems.append("instead: " + ", ".join(sorted(raised)))

    fs_code = fs_ok = None
    t_fs = min((v for k, v in raised.items() if k in FAIL_SAFE_DETECTORS), default=None)
    if t_fs is not None:
        after = [(t, code) for t, _, code in trace.ticks["a"] if t >= t_fs]
        if after:
            fs_code = after[0][1]
            fs_ok = all(code == FAIL_SAFE_CODE for _, code in after)
            if not fs_ok:
                problems.append(f"code {fs_code} at first tick after detection (want {FAIL_SAFE_CODE})")
        else:
            problems.append("no tick after detection to check the fail-safe code")
            fs_ok = False
    reason = "; ".join(problems) if problems else f"{row.expected} after {latency:.4g} s"
    return FmeaResult(row, t_act, flags, deadline, latency, fs_code, fs_ok, not problems, reason)


def fmea(base: Scenario, out_dir=None, matrix: Optional[Sequence[MatrixRow]] = None,
         plan: FmeaPlan = FmeaPlan(), with_traces: bool = False,
         threads: Optional[int] = None) -> list[FmeaResult]:
    rows = list(builtin_matrix() if matrix is None else matrix)
    scenarios = [fmea_scenario(base, r, plan) for r in rows]

    def one(item):
        i, (row, sc) = item
        tr = run(sc)
        if out_dir is not None:
            write_run(tr, Path(out_dir) / "runs" / f"{i:02d}_{_slug(row.name)}", with_traces)
        return evaluate(row, sc, tr)

    results = map_ordered(one, list(enumerate(zip(rows, scenarios))), threads)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "fmea_report.csv").write_text(fmea_csv(results), encoding="utf-8", newline="")
        (out / "fmea_report.txt").write_text(fmea_text(results), encoding="utf-8", newline="")
    return results


def coverage(results: Sequence[FmeaResult]) -> float:
    faults = [r for r in results if r.row.expected != "none"]
    if not faults:
        return 1.0
    return sum(r.detected for r in faults) / len(faults)


FMEA_COLUMNS = ("fault", "kind", "system", "expected", "t_activate", "t_missing_osc",
                "t_low_amplitude", "t_asymmetry", "latency", "deadline", "fail_safe_code",
                "fail_safe_ok", "verdict", "reason")


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def fmea_csv(results: Sequence[FmeaResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FMEA_COLUMNS)
    for r in results:
        w.writerow([r.row.name, r.row.kind, r.row.system, r.row.expected, _num(r.t_activate),
                    _num(r.flags["missing_osc"]), _num(r.flags["low_amplitude"]),
                    _num(r.flags["asymmetry"]), _num(r.latency), _num(r.deadline),
                    "" if r.fail_safe_code is None else r.fail_safe_code,
                    "" if r.fail_safe_ok is None else str(r.fail_safe_ok).lower(),
                    "PASS" if r.verdict else "FAIL", r.reason])
    w.writerow(["coverage", "", "", "", "", "", "", "", "", "", "", "", "", repr(coverage(results))])
    return buf.getvalue()


def _us(v: Optional[float]) -> str:
    return "-" if v is None else f"{v * 1e6:.2f} us"


def fmea_text(results: Sequence[FmeaResult]) -> str:
    lines = ["FMEA report", ""]
    width = max(len(r.row.name) for r in results) if results else 10
    for r in results:
        verdict = "PASS" if r.verdict else "FAIL"
        lines.append(f"{verdict}  {r.row.name:<{width}}  expect {r.row.expected:<13} "
                     f"latency {_us(r.latency):>12}  deadline {_us(r.deadline):>12}  {r.reason}")
    n_pass = sum(r.verdict for r in results)
    lines += ["", f"{n_pass}/{len(results)} rows pass; detection coverage {coverage(results):.1%}", ""]
    return "\n".join(lines)


def all_pass(results: Sequence[FmeaResult]) -> bool:
    return all(r.verdict for r in results)
