"""Forcing filter on the c = 2 ellipsoid with f replaced by f + kappa k1."""
import argparse
import logging
from pathlib import Path

from surface_stokes.cli import parse_levels
from surface_stokes.experiments import RunConfig, killing_filter_study

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--c", type=float, default=2.0)
ap.add_argument("--kappa", type=float, default=1.0)
ap.add_argument("--levels", type=parse_levels, default=(3, 4, 5, 6))
ap.add_argument("--jitter", type=float, default=0.05)
ap.add_argument("--out", type=Path, default=Path("out/forcing"))
args = ap.parse_args()
logging.basicConfig(level=logging.INFO)

cfg = RunConfig(c=args.c, levels=args.levels, add_killing=args.kappa, mesh_jitter=args.jitter, out=args.out)
rep = killing_filter_study(cfg)["forcing"]
for r, f in zip(rep.rows, rep.filter_reports):
    sides = [(d["index"], round(d["left"], 4), round(d["right"], 4)) for d in f.diagnostics]
    print(f"L{r.level} h={r.h:.4f} unfiltered={r.extra['unfiltered_l2']:.4g} filtered={r.l2:.4g} "
          f"pk_f_error={r.extra['pk_f_error']:.4g} J={r.Jh} sides={sides}")
