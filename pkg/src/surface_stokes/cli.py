"""Command line entry point: ``surface-stokes run|eigen ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .assembly import DEFAULT_RHO
from .experiments import CSV_HEADER, RunConfig, convergence_study, eigen_study, killing_filter_study
from .killing import FilterPolicy

log = logging.getLogger("surface_stokes")


def parse_levels(text: str) -> tuple:
    """'3..6' -> (3, 4, 5, 6); '2,4' and '5' also accepted."""
    if ".." in text:
        a, b = text.split("..")
        lo, hi = int(a), int(b)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty level range {text!r}")
        return tuple(range(lo, hi + 1))
    try:
        return tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse levels {text!r}") from None


def parse_alpha(text: str) -> float:
    if "/" in text:
        a, b = text.split("/")
        return float(a) / float(b)
    return float(text)


def _common(p):
    p.add_argument("--c", type=float, default=1.0, help="z semi-axis of the ellipsoid")
    p.add_argument("--levels", type=parse_levels, default=(2, 3, 4), help="refinement levels, e.g. 3..6")
    p.add_argument("--rho", type=float, default=DEFAULT_RHO, help="interior penalty parameter")
    p.add_argument("--jitter", type=float, default=0.0, help="tangential perturbation of the base icosahedron")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="surface-stokes", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="convergence study for one or several filters")
    _common(run)
    run.add_argument("--alpha", type=parse_alpha, default=2.0, help="epsilon = h^alpha")
    run.add_argument("--epsilon", type=float, default=None, help="fixed epsilon, overrides --alpha")
    run.add_argument("--filter", action="append", default=None,
                     help="none|manual|known:<d>|auto:<alpha>|forcing; repeat to compare filters")
    run.add_argument("--add-killing", type=float, default=0.0, help="add kappa*k1 to the forcing")
    run.add_argument("--dump-mesh", action="store_true", help="write mesh_L<k>.off")

    eig = sub.add_parser("eigen", help="lowest eigenvalues per level with Richardson extrapolation")
    _common(eig)
    eig.add_argument("--k", type=int, default=3)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "eigen":
            cfg = RunConfig(c=args.c, levels=args.levels, rho=args.rho, out=args.out, eigen_count=args.k,
                            seed=args.seed, mesh_jitter=args.jitter)
            study = eigen_study(cfg)
            print(json.dumps(study.to_dict(), indent=1))
            return 0
        policy = ("fixed", args.epsilon) if args.epsilon is not None else ("h_power", args.alpha)
        filters = [FilterPolicy.parse(f) for f in (args.filter or ["none"])]
        cfg = RunConfig(c=args.c, levels=args.levels, epsilon_policy=policy, rho=args.rho, filter=filters[0],
                        add_killing=args.add_killing, out=args.out, dump_mesh=args.dump_mesh, seed=args.seed,
                        mesh_jitter=args.jitter)
        if len(filters) == 1:
            reports = {filters[0].label(): convergence_study(cfg)}
        else:
            reports = killing_filter_study(cfg, filters)
    except (ValueError, RuntimeError) as exc:
        print(f"surface-stokes: {exc}", file=sys.stderr)
        return 2
    for label, rep in reports.items():
        print(f"# filter={label}")
        print(",".join(CSV_HEADER))
        for row in rep.rows:
            print(",".join(row.csv_fields()))
        for row in rep.rows:
            if "unfiltered_l2" in row.extra:
                print(f"# level {row.level}: unfiltered_l2={row.extra['unfiltered_l2']:.6g} "
                      f"pk_f_error={row.extra['pk_f_error']:.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
