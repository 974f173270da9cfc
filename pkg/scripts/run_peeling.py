"""Run the two-fiber peeling scenario for one or more adhesion strengths.

Prints the converged midspan gap, the peak reaction and its location, and
the displacement at which the fibers separate.  Example::

    python scripts/run_peeling.py --f-min -0.01 -0.1 -1 --out runs/peeling
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

from sbip.scenario import apply_overrides, default_scenario, peeling_summary, run


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--f-min", type=float, nargs="+", default=[-1.0])
    p.add_argument("--out", default=None, help="directory for per-run artifacts")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    rows = []
    for f_min in args.f_min:
        scn = apply_overrides(default_scenario("peeling"), [f"interaction.f_min={f_min}", *args.override])
        out = Path(args.out) / f"fmin_{f_min:g}" if args.out else None
        tic = time.perf_counter()
        result = run(scn, out)
        summary = peeling_summary(result)
        summary.update(f_min=f_min, status=result.status, seconds=round(time.perf_counter() - tic, 1))
        rows.append(summary)
        print(json.dumps(summary), flush=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "summary.json").write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
