"""Automatic Killing filtering on the c = 1.1 ellipsoid compared with manual filtering."""
import argparse
import logging
from pathlib import Path

from surface_stokes.cli import parse_levels
from surface_stokes.experiments import RunConfig, killing_filter_study

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--c", type=float, default=1.1)
ap.add_argument("--levels", type=parse_levels, default=(3, 4, 5, 6))
ap.add_argument("--jitter", type=float, default=0.05)
ap.add_argument("--out", type=Path, default=Path("out/filters"))
args = ap.parse_args()
logging.basicConfig(level=logging.INFO)

reports = killing_filter_study(RunConfig(c=args.c, levels=args.levels, mesh_jitter=args.jitter, out=args.out))
for label, rep in reports.items():
    print(label)
    for r, f in zip(rep.rows, rep.filter_reports):
        margins = [round(d["margin"], 5) for d in f.diagnostics]
        print(f"  L{r.level} h={r.h:.4f} l2={r.l2:.3e} J={r.Jh} lam={[f'{x:.3g}' for x in r.lam]} margins={margins}")
