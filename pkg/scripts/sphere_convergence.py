"""Sphere convergence under eps = h and eps = h^2, with and without manual filtering."""
import argparse
import logging
from pathlib import Path

from surface_stokes.cli import parse_levels
from surface_stokes.experiments import RunConfig, killing_filter_study
from surface_stokes.killing import FilterPolicy

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--levels", type=parse_levels, default=(3, 4, 5, 6))
ap.add_argument("--jitter", type=float, default=0.05)
ap.add_argument("--out", type=Path, default=Path("out/sphere"))
args = ap.parse_args()
logging.basicConfig(level=logging.INFO)

for alpha in (1.0, 2.0):
    cfg = RunConfig(c=1.0, levels=args.levels, epsilon_policy=("h_power", alpha), mesh_jitter=args.jitter,
                    out=args.out / f"alpha_{alpha:g}")
    reports = killing_filter_study(cfg, [FilterPolicy("none"), FilterPolicy("manual_analytic")])
    for label, rep in reports.items():
        print(f"eps=h^{alpha:g} {label}")
        for r in rep.rows:
            print(f"  L{r.level} h={r.h:.4f} energy={r.energy:.3e} l2={r.l2:.3e} pk={r.pk_norm:.3e} "
                  f"eoc_e={r.eoc_energy:.2f} eoc_l2={r.eoc_l2:.2f}")
