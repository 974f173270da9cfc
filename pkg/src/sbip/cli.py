"""Command line interface.

::

    sbip run SCENARIO.json --out DIR [--threads N] [--swap-master-slave] [--override key=value ...]
    sbip sweep-potential --gap-min 1e-4 --gap-max 1 --angles 0,30,60,90 --out DIR
    sbip default {peeling,helix_surfaces,potential_sweep}

Exit codes: 0 success, 2 configuration error, 3 solver abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from . import __version__
from .scenario import (
    EXIT_CONFIG,
    EXIT_OK,
    KINDS,
    ConfigError,
    apply_overrides,
    default_scenario,
    dump_scenario,
    load_scenario,
    run,
)


def _angles(text: str) -> list[float]:
    try:
        return [float(a) for a in text.split(",") if a.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad angle list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbip", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario", help="JSON scenario file")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--threads", type=int, default=None, help="worker threads for pair evaluation")
    r.add_argument("--swap-master-slave", action="store_true", help="swap the master/slave roles of every pair")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="e.g. interaction.f_min=-0.1")

    s = sub.add_parser("sweep-potential", help="tabulate the SBIP potential against the reference")
    s.add_argument("--gap-min", type=float, default=1e-4, help="smallest g/R")
    s.add_argument("--gap-max", type=float, default=1.0, help="largest g/R")
    s.add_argument("--n-gaps", type=int, default=9)
    s.add_argument("--angles", type=_angles, default=[float(a) for a in range(0, 91, 10)], help="comma separated degrees")
    s.add_argument("--out", required=True, help="output directory")

    d = sub.add_parser("default", help="print a default scenario file")
    d.add_argument("kind", choices=KINDS)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.command == "default":
            print(dump_scenario(default_scenario(args.kind)))
            return EXIT_OK
        if args.command == "sweep-potential":
            scn = default_scenario("potential_sweep")
            scn.sweep.gap_min, scn.sweep.gap_max = args.gap_min, args.gap_max
            scn.sweep.n_gaps, scn.sweep.angles_deg = args.n_gaps, list(args.angles)
            scn = apply_overrides(scn, [])
            return run(scn, args.out).status
        scn = load_scenario(args.scenario)
        overrides = list(args.override)
        if args.swap_master_slave:
            overrides.append("swap_master_slave=true")
        scn = apply_overrides(scn, overrides)
        result = run(scn, args.out, threads=args.threads)
        if result.status != EXIT_OK:
            print(f"solver abort: {result.message}", file=sys.stderr)
        return result.status
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        if getattr(args, "out", None):
            from pathlib import Path

            out = Path(args.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(json.dumps({"status": "config_error", "message": str(exc)}, indent=2) + "\n")
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
