"""Command-line front end: ``mgsync run|validate|calibrate|list-scenarios``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .calibrate import CalibrationError, calibrate
from .comm_graph import has_spanning_tree
from .engine import SimulationError, run, summarize
from .scenario import ScenarioError, bundled_scenarios, dump_scenario, parse_scenario


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for item in pairs:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ScenarioError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value
    return out


def cmd_run(args) -> int:
    s = parse_scenario(args.scenario, _overrides(args.set))
    if args.decimate is not None:
        if args.decimate < 1:
            raise ScenarioError("--decimate must be >= 1")
        s.decimate = args.decimate
        s.overrides = {**s.overrides, "decimate": str(args.decimate)}
    if not s.is_calibrated:
        logging.info("scenario has no set points; calibrating first")
        s = calibrate(s)
    ts = run(s)
    ts.to_csv(args.out)
    print(summarize(ts))
    return 0


def cmd_validate(args) -> int:
    s = parse_scenario(args.scenario)
    print(f"{args.scenario}: ok ({len(s.dgs)} DGs, {len(s.events)} events, "
          f"{'calibrated' if s.is_calibrated else 'not calibrated'})")
    if not has_spanning_tree(s.graph):
        print("warning: communication graph has no spanning tree rooted at a leader")
    return 0


def cmd_calibrate(args) -> int:
    s = calibrate(parse_scenario(args.scenario))
    Path(args.out).write_text(dump_scenario(s))
    d = s.dgs[0]
    print(f"w_set0 = {d.w_set0:.6f} rad/s, v_set0 = {d.v_set0:.6f} V, grid angle = {s.grid.angle_deg:.6f} deg")
    return 0


def cmd_list(args) -> int:
    for p in bundled_scenarios():
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mgsync", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a scenario and write a CSV time series")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scenario field, e.g. controller.kp_phase=0.03")
    p.add_argument("--decimate", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="parse and check a scenario file")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("calibrate", help="write a copy of a scenario with calibrated set points")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("list-scenarios", help="print the bundled scenario files")
    p.set_defaults(func=cmd_list)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, CalibrationError, SimulationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
