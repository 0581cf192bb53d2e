"""Command-line front end.

Exit codes: 0 success, 2 input error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import tempfile
from importlib import resources
from typing import List, Optional, Tuple

from . import __version__
from .engine import Deadlock, Simulator
from .magnetics import (FieldProfile, InvalidParams, MtjParams, StepTooCoarse,
                        first_flip_time)
from .memory import DEFAULT_ACTIVE_SUSCEPTIBILITY, CapacityExceeded, InvalidGeometry
from .scenario import Scenario, ScenarioError, dump_scenario, load_scenario

log = logging.getLogger("sttram_sentinel")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3

INPUT_ERRORS = (ScenarioError, CapacityExceeded, InvalidGeometry, InvalidParams, OSError,
                ValueError)


class UsageError(ValueError):
    pass


def bundled_scenarios() -> List[str]:
    root = resources.files("sttram_sentinel.scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def read_scenario(ref: str) -> Tuple[Scenario, Optional[str]]:
    """Load a scenario by path, or by bundled name when no such file exists."""
    if os.path.exists(ref):
        with open(ref, "rb") as fh:
            return load_scenario(fh.read()), os.path.dirname(os.path.abspath(ref))
    if ref in bundled_scenarios():
        blob = resources.files("sttram_sentinel.scenarios").joinpath(ref + ".json").read_bytes()
        return load_scenario(blob), None
    raise FileNotFoundError(f"no scenario file or bundled scenario named {ref!r} "
                            f"(bundled: {', '.join(bundled_scenarios())})")


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        write_atomic(path, text)


def cmd_run(args) -> int:
    scenario, root = read_scenario(args.scenario)
    if args.seed_override is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed_override)
    sim = Simulator(scenario, root)
    try:
        report = sim.run()
    except Deadlock as exc:
        print(f"deadlock: {exc}", file=sys.stderr)
        print(json.dumps(exc.dump, indent=2, sort_keys=True), file=sys.stderr)
        if args.trace:
            write_atomic(args.trace, sim.trace_text())
        return EXIT_RUNTIME
    if args.trace:
        write_atomic(args.trace, sim.trace_text())
    _emit(report.to_csv() if args.format == "csv" else report.to_json(), args.metrics)
    log.info("run finished at %.9f s simulated time", report.end_time)
    return EXIT_OK


def cmd_validate(args) -> int:
    scenario, _ = read_scenario(args.scenario)
    sys.stdout.write(dump_scenario(scenario) + "\n")
    return EXIT_OK


def sweep_rows(amplitudes, profile_kind: str, cell: str, duration: float,
               frequency: Optional[float] = None, direction=None,
               params: Optional[MtjParams] = None):
    p = params or MtjParams()
    if cell == "sensor":
        p = p.with_susceptibility(DEFAULT_ACTIVE_SUSCEPTIBILITY)
    rows = []
    for a in amplitudes:
        if profile_kind == "dc":
            prof = FieldProfile.dc(a, direction or p.easy_axis)
        else:
            f = frequency or p.gamma * p.h_k / (2 * math.pi)
            prof = FieldProfile.ac(a, f, direction or (0.0, 1.0, 0.0))
        times = [first_flip_time(bit, p, prof, duration) for bit in (0, 1)]
        hits = [t for t in times if t is not None]
        rows.append((a, int(times[0] is not None), int(times[1] is not None),
                     min(hits) if hits else None))
    return rows


def cmd_sweep(args) -> int:
    if args.steps < 2:
        raise UsageError("--steps must be at least 2")
    if args.amp_start == args.amp_end:
        raise UsageError("amplitude range is empty (start equals end)")
    if min(args.amp_start, args.amp_end) < 0:
        raise UsageError("amplitudes must be non-negative")
    if not args.duration_s > 0:
        raise UsageError("--duration-s must be positive")
    direction = None
    if args.direction:
        direction = tuple(float(v) for v in args.direction.split(","))
        if len(direction) != 3:
            raise UsageError("--direction takes three comma-separated numbers")
    step = (args.amp_end - args.amp_start) / (args.steps - 1)
    amps = [args.amp_start + i * step for i in range(args.steps)]
    rows = sweep_rows(amps, args.profile, args.cell, args.duration_s, args.frequency, direction)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["amplitude_T", "flipped_0", "flipped_1", "flip_time_s"])
    for a, f0, f1, t in rows:
        w.writerow([repr(a), f0, f1, "" if t is None else repr(t)])
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def cmd_report(args) -> int:
    with open(args.metrics, encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "nodes" not in doc:
        raise UsageError(f"{args.metrics} is not a metrics JSON file")
    out = io.StringIO()
    if args.format == "csv":
        names = sorted({k for m in doc["nodes"].values() for k in m})
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["node"] + names)
        for nid, m in sorted(doc["nodes"].items(), key=lambda kv: int(kv[0])):
            w.writerow([nid] + ["" if m.get(k) is None else m.get(k) for k in names])
    else:
        out.write(f"simulated time {doc.get('end_time', 0.0):.6f} s, "
                  f"quiescent={doc.get('quiescent')}\n")
        out.write(f"{'node':>4} {'state':>5} {'detected':>8} {'recovered B':>12} "
                  f"{'latency s':>12} {'energy J':>12} {'downtime s':>12} digest\n")
        for nid, m in sorted(doc["nodes"].items(), key=lambda kv: int(kv[0])):
            out.write(f"{nid:>4} {m['final_state']:>5} {m['attacks_detected']:>8} "
                      f"{m['recovery_bytes']:>12} {m['recovery_latency']:>12.6f} "
                      f"{m['recovery_energy']:>12.6f} {m['downtime']:>12.6f} "
                      f"{'ok' if m['final_digest_match'] else 'MISMATCH'}\n")
        for link in doc.get("links", []):
            a, b = link["nodes"]
            out.write(f"link {a}-{b} {link['kind']}: {link['messages']} frames, "
                      f"{link['bytes']} B, {link['energy']:.6f} J\n")
    _emit(out.getvalue(), args.output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sttram-sentinel",
                                 description="STTRAM IoT attack and recovery simulator")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("--scenario", required=True, help="scenario file or bundled name")
    r.add_argument("--trace", help="write the event trace here")
    r.add_argument("--metrics", help="write metrics here (default: stdout)")
    r.add_argument("--format", choices=["json", "csv"], default="json")
    r.add_argument("--seed-override", type=int)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a scenario and print it with defaults filled")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("sweep", help="flip outcome of both polarities across field amplitudes")
    s.add_argument("--amp-start", type=float, required=True, help="tesla")
    s.add_argument("--amp-end", type=float, required=True, help="tesla")
    s.add_argument("--steps", type=int, default=11)
    s.add_argument("--duration-s", type=float, default=20e-9)
    s.add_argument("--cell", choices=["data", "sensor"], default="data")
    s.add_argument("--profile", choices=["dc", "ac"], default="dc")
    s.add_argument("--frequency", type=float, help="AC frequency in Hz (default gamma*h_k/2pi)")
    s.add_argument("--direction", help="field direction x,y,z (default easy axis for DC, "
                                       "in-plane hard axis for AC)")
    s.add_argument("--output", help="CSV destination (default: stdout)")
    s.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a metrics JSON file")
    p.add_argument("--metrics", required=True)
    p.add_argument("--format", choices=["text", "csv"], default="text")
    p.add_argument("--output")
    p.set_defaults(func=cmd_report)
    return ap


def _configure_logging() -> None:
    level = os.environ.get("STTRAM_SENTINEL_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (UsageError, StepTooCoarse) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # anything else is a simulator failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
