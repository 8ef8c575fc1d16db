"""Lowest three eigenvalues per ellipsoid, Richardson-extrapolated from two levels."""
import argparse
import logging

from surface_stokes.cli import parse_levels
from surface_stokes.experiments import RunConfig, eigen_study

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--levels", type=parse_levels, default=(4, 5))
ap.add_argument("--c", type=float, nargs="+", default=[2.0, 1.25, 1.1, 1.0])
ap.add_argument("--jitter", type=float, default=0.05)
args = ap.parse_args()
logging.basicConfig(level=logging.INFO)

print(f"{'c':>6} {'lambda1':>12} {'lambda2':>12} {'lambda3':>12}")
for c in args.c:
    st = eigen_study(RunConfig(c=c, levels=args.levels, mesh_jitter=args.jitter))
    print(f"{c:6.3g} " + " ".join(f"{v:12.5g}" for v in st.extrapolated))
