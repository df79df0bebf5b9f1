"""
osc-sim command line.

Exit codes: 0 success, 1 I/O or configuration error, 2 numeric abort,
3 FMEA failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from oscsim import campaign
from oscsim.dac import dac_rows
from oscsim.scenario import ConfigError, load_scenario, parse_scenario
from oscsim.sim import NumericAbort, run

EXIT_OK = 0
EXIT_IO = 1
EXIT_NUMERIC = 2
EXIT_FMEA = 3

STARTUP_DURATION = 60e-6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is reserved for numeric aborts
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        key, eq, value = item.partition("=")
        if not eq or not key.strip():
            raise ConfigError([f"--set expects key=value, got {item!r}"])
        out[key.strip()] = value.strip()
    if args.dt is not None:
        out["sim.dt"] = args.dt
    if args.duration is not None:
        out["sim.t_end"] = args.duration
    return out


def _scenario(args, extra: Optional[dict[str, str]] = None):
    over = dict(extra or {})
    over.update(_overrides(args))
    if args.scenario:
        return load_scenario(args.scenario, over)
    return parse_scenario("", over)


def _print_summary(doc: dict) -> None:
    for name, s in doc["systems"].items():
        m = s["measurements"]
        f = m["frequency"]
        fl = ", ".join(k for k, v in s["flags"].items() if v is not None) or "none"
        print(f"system {name}: rms {m['rms']:.4f} V, "
              f"f {'-' if f is None else f'{f / 1e6:.4f} MHz'}, "
              f"code {s['final_code']}, flags {fl}")


def cmd_run(args) -> int:
    sc = _scenario(args)
    doc = campaign.write_run(run(sc), args.out)
    _print_summary(doc)
    print(f"wrote {Path(args.out) / 'trace.csv'} and {Path(args.out) / 'summary.json'}")
    return EXIT_OK


def _parse_values(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise ConfigError([f"--values must be a comma-separated list of numbers, got {text!r}"]) from None
    if not vals:
        raise ConfigError(["--values is empty"])
    return vals


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    if args.values:
        values = _parse_values(args.values)
    else:
        lo, hi, n = args.logspace
        values = [float(v) for v in np.geomspace(float(lo), float(hi), int(n))]
    points = campaign.sweep(sc, args.param, values, args.out, with_traces=args.traces)
    for p in points:
        f = "-" if p.frequency is None else f"{p.frequency / 1e6:.4f} MHz"
        print(f"{args.param}={p.value:.6g}: rms {p.amplitude_rms:.4f} V, f {f}, "
              f"code {p.final_code}, i_drv {p.mean_driver_current * 1e3:.3f} mA")
    print(f"wrote {Path(args.out) / 'sweep.csv'}")
    return EXIT_OK


def cmd_fmea(args) -> int:
    sc = _scenario(args)
    results = campaign.fmea(sc, args.out, with_traces=args.traces)
    print(campaign.fmea_text(results), end="")
    print(f"wrote {Path(args.out) / 'fmea_report.csv'}")
    return EXIT_OK if campaign.all_pass(results) else EXIT_FMEA


def dac_table_path(out: str) -> Path:
    p = Path(out)
    if p.is_dir() or not p.suffix:
        return p / "dac_table.csv"
    return p


DAC_COLUMNS = ("code", "oscD", "oscE", "oscF", "gm_stages", "units", "amperes", "delta_percent")


def cmd_dac_table(args) -> int:
    sc = _scenario(args)
    path = dac_table_path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DAC_COLUMNS)
        for r in dac_rows(sc.dac.config()):
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                        for c in DAC_COLUMNS])
    print(f"wrote {path}")
    return EXIT_OK


def startup_metrics(trace) -> dict:
    """Envelope timing of the start-up transient on system a."""
    t = trace.t
    vd = np.abs(trace["v_diff"])
    if len(t) < 2:
        return {"t_90": None, "final_peak": float(vd[-1]) if len(vd) else 0.0}
    # running peak over roughly one period of samples
    f = trace.summary.get("f_res", 0.0)
    n = max(1, int(round(1.0 / (f * (t[1] - t[0]))))) if f else 1
    env = np.maximum.accumulate(vd) if n == 1 else np.array(
        [vd[max(0, i - n):i + 1].max() for i in range(len(vd))])
    final = float(env[-1])
    hit = np.nonzero(env >= 0.9 * final)[0]
    return {"t_90": float(t[hit[0]]) if final > 0 and len(hit) else None, "final_peak": final}


def cmd_startup(args) -> int:
    sc = _scenario(args, {"sim.t_end": repr(STARTUP_DURATION), "sim.decimation": "1"})
    trace = run(sc)
    doc = campaign.summary_document(trace)
    doc["startup"] = startup_metrics(trace)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    campaign.write_trace_csv(trace, out / "trace.csv")
    campaign.write_summary(doc, out / "summary.json")
    hist = " -> ".join(f"{c} @ {t * 1e6:g} us" for t, c in trace.code_history["a"])
    t90 = doc["startup"]["t_90"]
    print(f"codes: {hist}")
    print(f"envelope reaches 90% of {doc['startup']['final_peak']:.4f} V at "
          f"{'-' if t90 is None else f'{t90 * 1e6:.2f} us'}")
    print(f"wrote {out / 'trace.csv'} and {out / 'summary.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="osc-sim", description="LC oscillator driver behavioural simulator")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_default):
        sp.add_argument("--scenario", help="scenario file (INI-style); defaults apply if omitted")
        sp.add_argument("--out", default=out_default, help=f"output location (default: {out_default})")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a scenario key, e.g. network.r_s=5 (repeatable)")
        sp.add_argument("--dt", help="integration step in seconds (overrides sim.dt)")
        sp.add_argument("--duration", help="simulated time in seconds (overrides sim.t_end)")

    sp = sub.add_parser("run", help="simulate one scenario")
    common(sp, "out")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run one scenario per value of a numeric key")
    common(sp, "sweep")
    sp.add_argument("--param", required=True, help="dotted scenario key, e.g. network.r_s")
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--values", help="comma-separated values")
    g.add_argument("--logspace", nargs=3, metavar=("START", "STOP", "N"),
                   help="N log-spaced values from START to STOP")
    sp.add_argument("--traces", action="store_true", help="also write per-run trace.csv")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("fmea", help="run the built-in fault matrix")
    common(sp, "fmea")
    sp.add_argument("--traces", action="store_true", help="also write per-run trace.csv")
    sp.set_defaults(func=cmd_fmea)

    sp = sub.add_parser("dac-table", help="write the 128-code DAC table")
    common(sp, "dac_table.csv")
    sp.set_defaults(func=cmd_dac_table)

    sp = sub.add_parser("startup", help="simulate the start-up transient at full resolution")
    common(sp, "startup")
    sp.set_defaults(func=cmd_startup)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_IO
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for p in exc.problems:
            print(f"  - {p}", file=sys.stderr)
        return EXIT_IO
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
