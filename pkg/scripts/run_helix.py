"""Pull and twist-and-pull runs of the helix-covered plates.

Prints the peak normal force of each mode, their ratio and the largest
lateral reaction.  Example::

    python scripts/run_helix.py --out runs/helix
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from sbip.scenario import apply_overrides, default_scenario, run


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--modes", nargs="+", default=["pull", "twist_pull"], choices=["pull", "twist_pull"])
    p.add_argument("--out", default=None)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    args = p.parse_args()

    peaks = {}
    for mode in args.modes:
        scn = apply_overrides(default_scenario("helix_surfaces"), [f'helix.mode="{mode}"', *args.override])
        out = Path(args.out) / mode if args.out else None

        def progress(rec, mode=mode):
            F = rec.reactions["top"]
            print(f"{mode} t={rec.time:.4f} F_z={F[2]:+.5g} pi_ia={rec.pi_ia:.4g}", flush=True)

        res = run(scn, out, callback=progress)
        F = np.array([r.reactions["top"] for r in res.records])
        peaks[mode] = float(F[:, 2].max())
        summary = dict(
            mode=mode,
            status=res.status,
            peak_Fz=peaks[mode],
            peak_over_ref=peaks[mode] / res.built.force_ref,
            max_lateral=float(np.abs(F[:, :2]).max()),
            detached=res.records[-1].pi_ia == 0.0,
            newton_iterations=res.total_iterations,
            seconds=round(res.elapsed, 1),
        )
        print(json.dumps(summary), flush=True)
    if len(peaks) == 2:
        print(f"pull / twist_pull peak ratio: {peaks['pull'] / peaks['twist_pull']:.3f}")


if __name__ == "__main__":
    main()
