"""Error measurement, convergence and eigenvalue studies, CSV/SVG output."""
from __future__ import annotations

import csv
import gc
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .assembly import DEFAULT_RHO, FeSystem, assemble
from .fem import FaceBasis, FeFunction
from .geometry import (
    ExactSolution,
    KillingBasis,
    SurfaceGeometry,
    closest_point,
    exact_fields,
    killing_basis,
    piola_pullback,
    surface_quadrature,
)
from .killing import FilterPolicy, FilterReport, filter_velocity, forcing_filter_pipeline, write_reports
from .mesh import TriSurfaceMesh, icosphere, write_off
from .quadrature import face_rule
from .solver import SaddleFactorization, project_analytic_killing, solve_eigen, solve_stokes

log = logging.getLogger(__name__)

CSV_HEADER = ["level", "h", "energy", "l2", "h1", "pk_norm", "lam1", "lam2", "lam3", "Jh", "eoc_energy", "eoc_l2"]
FD_STEP = 1e-5


# ---------------------------------------------------------------------------
# configuration and report types
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    c: float = 1.0
    levels: Sequence[int] = (3, 4, 5)
    epsilon_policy: tuple = ("h_power", 2.0)  # or ("fixed", eps)
    rho: float = DEFAULT_RHO
    filter: FilterPolicy = field(default_factory=FilterPolicy)
    add_killing: float = 0.0  # forcing f + kappa * k1 when nonzero
    out: Optional[Path] = None
    dump_mesh: bool = False
    eigen_count: int = 3
    seed: int = 0
    mesh_jitter: float = 0.0  # see icosphere(); 0 gives the regular family

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")
        self.levels = tuple(int(l) for l in self.levels)
        if not self.levels or min(self.levels) < 0 or max(self.levels) > 7:
            raise ValueError("levels must lie in 0..7")
        kind, val = self.epsilon_policy
        if kind == "h_power":
            if not 0 < val <= 2:
                raise ValueError("alpha must lie in (0, 2]")
        elif kind != "fixed":
            raise ValueError(f"unknown epsilon policy {kind!r}")
        if self.out is not None:
            self.out = Path(self.out)

    @property
    def surface(self) -> SurfaceGeometry:
        return SurfaceGeometry(self.c)

    def epsilon(self, h: float) -> float:
        kind, val = self.epsilon_policy
        return h**val if kind == "h_power" else float(val)


@dataclass
class LevelRow:
    level: int
    h: float
    energy: float
    l2: float
    h1: float
    pk_norm: float
    lam: tuple = (math.nan, math.nan, math.nan)
    Jh: tuple = ()
    eoc_energy: float = math.nan
    eoc_l2: float = math.nan
    extra: dict = field(default_factory=dict)

    def csv_fields(self):
        lam = tuple(self.lam) + (math.nan,) * (3 - len(self.lam))
        return [str(self.level), _g(self.h), _g(self.energy), _g(self.l2), _g(self.h1), _g(self.pk_norm),
                _g(lam[0]), _g(lam[1]), _g(lam[2]), ";".join(str(i) for i in self.Jh),
                _g(self.eoc_energy), _g(self.eoc_l2)]


def _g(x):
    return format(float(x), ".17g")


@dataclass
class ErrorReport:
    rows: List[LevelRow] = field(default_factory=list)
    label: str = ""
    filter_reports: List[FilterReport] = field(default_factory=list)

    def append(self, row: LevelRow):
        if self.rows:
            prev = self.rows[-1]
            row.eoc_energy = eoc(prev.energy, row.energy, prev.h, row.h)
            row.eoc_l2 = eoc(prev.l2, row.l2, prev.h, row.h)
        self.rows.append(row)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows], float)

    @property
    def h(self):
        return self.column("h")

    def eocs(self, name):
        v, h = self.column(name), self.h
        return np.array([eoc(v[i - 1], v[i], h[i - 1], h[i]) for i in range(1, len(v))])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow(r.csv_fields())

    @classmethod
    def read_csv(cls, path) -> "ErrorReport":
        rep = cls()
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if header != CSV_HEADER:
                raise ValueError("unexpected CSV header")
            for rec in rd:
                f = [float(x) for x in rec[1:9]]
                rep.rows.append(LevelRow(
                    level=int(rec[0]), h=f[0], energy=f[1], l2=f[2], h1=f[3], pk_norm=f[4],
                    lam=(f[5], f[6], f[7]), Jh=tuple(int(x) for x in rec[9].split(";") if x),
                    eoc_energy=float(rec[10]), eoc_l2=float(rec[11]),
                ))
        return rep


def eoc(e_coarse, e_fine, h_coarse, h_fine) -> float:
    """log(e_{L-1}/e_L) / log(h_{L-1}/h_L)."""
    if not (0 < e_coarse < math.inf and 0 < e_fine < math.inf) or h_coarse == h_fine:
        return math.nan
    return (math.log(e_coarse) - math.log(e_fine)) / (math.log(h_coarse) - math.log(h_fine))


# ---------------------------------------------------------------------------
# reference fields and error norms
# ---------------------------------------------------------------------------


def killing_coefficients(surface, killing: KillingBasis, field_fn, n_quad: int = 96):
    """Coefficients of the L2 projection of ``field_fn`` onto span(killing)."""
    if killing.dim == 0:
        return np.zeros(0)
    pts, w = surface_quadrature(surface, n_quad)
    kv = killing.evaluate(pts)
    G = np.einsum("iqa,jqa,q->ij", kv, kv, w)
    b = np.einsum("iqa,qa,q->i", kv, field_fn(pts), w)
    return np.linalg.solve(G, b)


def reference_velocity(exact: ExactSolution, killing: KillingBasis):
    """u - P_K u as a callable on gamma.

    The discrete solution with eps > 0 is orthogonal to the Killing fields
    in the limit, so this is the field it converges to.
    """
    c = killing_coefficients(exact.surface, killing, exact.u)

    def field_fn(pts):
        out = exact.u(pts)
        if len(c):
            out = out - np.einsum("i,iqa->qa", c, killing.evaluate(pts))
        return out

    field_fn.killing_coefficients = c
    return field_fn


def killing_field(killing: KillingBasis, coeffs):
    coeffs = np.asarray(coeffs, float)

    def field_fn(pts):
        return np.einsum("i,iqa->qa", coeffs, killing.evaluate(pts))

    return field_fn


class ReferenceSampler:
    """Piola pullback of an analytic tangent field and its face gradients.

    Values and (finite-difference, in-plane) gradients are sampled once at
    the face quadrature points so several discrete fields can be measured.
    """

    def __init__(self, mesh: TriSurfaceMesh, surface: SurfaceGeometry, field_fn, *, gradients: bool = True,
                 step: float = FD_STEP):
        self.mesh = mesh
        bary, w = face_rule()
        self.bary = bary
        self.weights = mesh.face_areas[:, None] * w[None, :]
        pts = np.einsum("qk,fkd->fqd", bary, mesh.corners)
        nF, nq = pts.shape[:2]
        normals = np.repeat(mesh.face_normals, nq, axis=0)
        flat = pts.reshape(-1, 3)

        def pull(x):
            ev = closest_point(surface, x)
            return piola_pullback(surface, ev, normals, field_fn(ev.point_on_gamma))

        self.values = pull(flat).reshape(nF, nq, 3)
        self.grads = None
        if gradients:
            c = mesh.corners
            t1 = c[:, 1] - c[:, 0]
            t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
            t2 = np.cross(mesh.face_normals, t1)
            G = np.zeros((nF * nq, 3, 3))
            for t in (t1, t2):
                tq = np.repeat(t, nq, axis=0)
                d = (pull(flat + step * tq) - pull(flat - step * tq)) / (2.0 * step)
                G += d[:, :, None] * tq[:, None, :]
            self.grads = G.reshape(nF, nq, 3, 3)

    def l2_norm(self):
        return math.sqrt(float(np.einsum("fq,fqa,fqa->", self.weights, self.values, self.values)))


def _basis(mesh, dofmap, basis=None):
    return basis if basis is not None else FaceBasis(mesh, dofmap)


def error_norms(ref: ReferenceSampler, U: FeFunction, basis: Optional[FaceBasis] = None) -> dict:
    """energy (broken Def), l2 and broken H1 errors of U against the reference."""
    basis = _basis(U.mesh, U.dofmap, basis)
    diff = ref.values - U.evaluate(basis, ref.bary)
    l2 = float(np.einsum("fq,fqa,fqa->", ref.weights, diff, diff))
    out = {"l2": math.sqrt(l2)}
    if ref.grads is not None:
        gd = ref.grads - U.gradients(basis)[:, None]
        dd = 0.5 * (gd + np.swapaxes(gd, 2, 3))
        out["energy"] = math.sqrt(float(np.einsum("fq,fqab,fqab->", ref.weights, dd, dd)))
        out["h1"] = math.sqrt(float(np.einsum("fq,fqab,fqab->", ref.weights, gd, gd)) + l2)
    return out


def measure_errors(mesh, surface, U: FeFunction, exact: ExactSolution, killing: KillingBasis,
                   system: Optional[FeSystem] = None, *, level: int = -1) -> LevelRow:
    """One report row: errors against the pullback of u - P_K u, plus ||P_K U||."""
    ref = ReferenceSampler(mesh, surface, reference_velocity(exact, killing))
    e = error_norms(ref, U, system.basis if system is not None else None)
    pk = analytic_pk_norm(system, U, killing, surface) if killing.dim else 0.0
    return LevelRow(level, mesh.h, e["energy"], e["l2"], e["h1"], pk)


def analytic_pk_norm(system: Optional[FeSystem], U: FeFunction, killing: KillingBasis, surface) -> float:
    if killing.dim == 0:
        return 0.0
    if system is not None:
        return project_analytic_killing(system, U).norm
    # standalone path: Gram data from face quadrature
    basis = FaceBasis(U.mesh, U.dofmap)
    bary, w = face_rule()
    pts = np.einsum("qk,fkd->fqd", bary, U.mesh.corners).reshape(-1, 3)
    ev = closest_point(surface, pts)
    kv = killing.evaluate(ev.point_on_gamma).reshape((killing.dim,) + (U.mesh.n_faces, len(w), 3))
    vals = U.evaluate(basis, bary)
    wts = U.mesh.face_areas[:, None] * w[None, :]
    b = np.einsum("fq,ifqa,fqa->i", wts, kv, vals)
    qp, qw = surface_quadrature(surface, 64)
    kq = killing.evaluate(qp)
    G = np.einsum("iqa,jqa,q->ij", kq, kq, qw)
    c = np.linalg.solve(G, b)
    return float(np.sqrt(c @ G @ c))


# ---------------------------------------------------------------------------
# per-level pipeline
# ---------------------------------------------------------------------------


@dataclass
class LevelContext:
    level: int
    mesh: TriSurfaceMesh
    system: FeSystem
    reference: ReferenceSampler

    @property
    def h(self):
        return self.system.h


def prepare_level(config: RunConfig, level: int) -> LevelContext:
    surface = config.surface
    t0 = time.time()
    mesh = icosphere(surface, level, jitter=config.mesh_jitter, seed=config.seed)
    system = assemble(mesh, surface=surface, rho=config.rho, killing_forcing=config.add_killing)
    ref = ReferenceSampler(mesh, surface, reference_velocity(system.exact, system.killing))
    log.info("level %d: %d faces, h=%.4g, assembled in %.1fs", level, mesh.n_faces, system.h, time.time() - t0)
    if config.dump_mesh and config.out is not None:
        config.out.mkdir(parents=True, exist_ok=True)
        write_off(mesh, config.out / f"mesh_L{level}.off")
    return LevelContext(level, mesh, system, ref)


def _row(ctx: LevelContext, U: FeFunction, pk_source: FeFunction, eigs=None, Jh=()) -> LevelRow:
    e = error_norms(ctx.reference, U, ctx.system.basis)
    pk = project_analytic_killing(ctx.system, pk_source).norm if ctx.system.killing.dim else 0.0
    lam = tuple(float(v) for v in eigs.values[:3]) if eigs is not None else (math.nan,) * 3
    return LevelRow(ctx.level, ctx.h, e["energy"], e["l2"], e["h1"], pk, lam, tuple(Jh))


def _pk_f_error(ctx: LevelContext, estimate: FeFunction) -> float:
    """L2 distance between eps*U_f and the analytic P_K f on gamma."""
    s = ctx.system
    kappa = s.killing_forcing

    def forcing(pts):
        out = s.exact.f(pts)
        if kappa:
            out = out + kappa * s.killing.evaluate(pts)[0]
        return out

    coeffs = killing_coefficients(s.surface, s.killing, forcing)
    ref = ReferenceSampler(ctx.mesh, s.surface, killing_field(s.killing, coeffs), gradients=False)
    return error_norms(ref, estimate, s.basis)["l2"]


def run_level(config: RunConfig, level: int, policies: Sequence[FilterPolicy]) -> Dict[str, tuple]:
    """Solve one level and measure it under every filter policy.

    Returns {policy label: (LevelRow, FilterReport)}.
    """
    ctx = prepare_level(config, level)
    s, h = ctx.system, ctx.h
    out = {}
    regular = [p for p in policies if p.mode != "forcing_filter"]
    if regular:
        eps = config.epsilon(h)
        t0 = time.time()
        fac = SaddleFactorization(s, eps)
        sol = solve_stokes(s, eps, factorization=fac)
        eigs = solve_eigen(s, config.eigen_count, factorization=fac, seed=config.seed)
        log.info("level %d: eps=%.3g solve+eigen in %.1fs, Lambda=%s", level, eps, time.time() - t0, eigs.values)
        del fac
        for pol in regular:
            rep = filter_velocity(s, eigs, sol, pol, level=level)
            row = _row(ctx, rep.filtered, sol.U, eigs, rep.selected)
            row.extra.update(epsilon=eps, residual=sol.residual_norm)
            rep.extra.update(l2=row.l2, energy=row.energy, epsilon=eps)
            out[pol.label()] = (row, rep)
    if any(p.mode == "forcing_filter" for p in policies):
        res = forcing_filter_pipeline(ctx.mesh, s, h, k=config.eigen_count, level=level, full=True)
        row = _row(ctx, res.filtered, res.U_h2.U, res.eigs, res.report.selected)
        unfiltered = error_norms(ctx.reference, res.U_h2.U, s.basis)
        pkf = _pk_f_error(ctx, res.pk_f_estimate)
        row.extra.update(unfiltered_l2=unfiltered["l2"], unfiltered_energy=unfiltered["energy"], pk_f_error=pkf)
        res.report.extra.update(l2=row.l2, unfiltered_l2=unfiltered["l2"], pk_f_error=pkf)
        out["forcing"] = (row, res.report)
    del ctx
    gc.collect()
    return out


def _study(config: RunConfig, policies: Sequence[FilterPolicy]) -> Dict[str, ErrorReport]:
    reports = {p.label(): ErrorReport(label=p.label()) for p in policies}
    for level in config.levels:
        try:
            res = run_level(config, level, policies)
        except Exception as exc:
            raise RuntimeError(f"study aborted at level {level}: {exc}") from exc
        for label, (row, frep) in res.items():
            reports[label].append(row)
            reports[label].filter_reports.append(frep)
    return reports


def convergence_study(config: RunConfig) -> ErrorReport:
    """Single-policy study; writes report.csv, report.json and plots if ``config.out``."""
    rep = _study(config, [config.filter])[config.filter.label()]
    if config.out is not None:
        write_outputs(rep, config.out)
    return rep


def killing_filter_study(config: RunConfig, policies: Optional[Sequence[FilterPolicy]] = None) -> Dict[str, ErrorReport]:
    """Same levels under several filters; one solve per level serves all of them."""
    if policies is None:
        if config.add_killing:
            policies = [FilterPolicy("none"), FilterPolicy("forcing_filter")]
        else:
            policies = [FilterPolicy("none"), FilterPolicy("manual_analytic"), FilterPolicy("threshold", alpha=1.5),
                        FilterPolicy("threshold", alpha=1.0)]
    reports = _study(config, policies)
    if config.out is not None:
        for label, rep in reports.items():
            write_outputs(rep, config.out / label.replace(":", "_"))
        write_comparison_plot(reports, "l2", config.out / "plot_filters_l2.svg")
    return reports


@dataclass
class EigenStudy:
    c: float
    levels: tuple
    h: np.ndarray
    values: np.ndarray  # (levels, k)
    extrapolated: np.ndarray  # (k,)

    def ratios(self):
        v = self.values
        return v[:-1] / v[1:]

    def to_dict(self):
        return {"c": self.c, "levels": list(self.levels), "h": self.h.tolist(), "values": self.values.tolist(),
                "extrapolated": self.extrapolated.tolist()}


def richardson(h_coarse, v_coarse, h_fine, v_fine, order: float = 2.0):
    """Extrapolate v(h) = v0 + C h^order from two levels.

    Reduces to (4 v_fine - v_coarse) / 3 for an exact halving of h.
    """
    r = (h_coarse / h_fine) ** order
    return (r * np.asarray(v_fine) - np.asarray(v_coarse)) / (r - 1.0)


def eigen_study(config: RunConfig) -> EigenStudy:
    if len(config.levels) < 2:
        raise ValueError("eigen_study needs at least two levels")
    hs, vals = [], []
    for level in config.levels:
        mesh = icosphere(config.surface, level, jitter=config.mesh_jitter, seed=config.seed)
        s = assemble(mesh, surface=config.surface, rho=config.rho)
        fac = SaddleFactorization(s, s.h**2)
        e = solve_eigen(s, config.eigen_count, factorization=fac, seed=config.seed)
        log.info("eigen level %d h=%.4g Lambda=%s", level, s.h, e.values)
        hs.append(s.h)
        vals.append(e.values)
        del fac, s
        gc.collect()
    hs, vals = np.array(hs), np.array(vals)
    ex = richardson(hs[-2], vals[-2], hs[-1], vals[-1])
    study = EigenStudy(config.c, tuple(config.levels), hs, vals, ex)
    if config.out is not None:
        config.out.mkdir(parents=True, exist_ok=True)
        (config.out / "eigen.json").write_text(json.dumps(study.to_dict(), indent=1))
    return study


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def write_outputs(report: ErrorReport, out: Path):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "report.csv")
    write_reports(report.filter_reports, out / "report.json")
    for metric in ("energy", "l2", "h1", "pk_norm"):
        write_loglog_svg({metric: (report.h, report.column(metric))}, out / f"plot_{metric}.svg", title=metric)


def write_comparison_plot(reports: Dict[str, ErrorReport], metric: str, path: Path):
    series = {label: (r.h, r.column(metric)) for label, r in reports.items()}
    write_loglog_svg(series, path, title=metric)


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def write_loglog_svg(series: Dict[str, tuple], path, title: str = "", width: int = 520, height: int = 380):
    """Minimal log-log line plot with slope-1 and slope-2 guides."""
    pts = [(h, v) for hs, vs in series.values() for h, v in zip(hs, vs) if h > 0 and v > 0 and np.isfinite(v)]
    path = Path(path)
    if not pts:
        path.write_text(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"></svg>\n')
        return
    lx = np.log10([p[0] for p in pts])
    ly = np.log10([p[1] for p in pts])
    x0, x1 = lx.min() - 0.1, lx.max() + 0.1
    y0, y1 = ly.min() - 0.3, ly.max() + 0.3
    m = 60

    def X(v):
        return m + (np.log10(v) - x0) / (x1 - x0) * (width - 2 * m)

    def Y(v):
        return height - m - (np.log10(v) - y0) / (y1 - y0) * (height - 2 * m)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect x="{m}" y="{m}" width="{width - 2 * m}" height="{height - 2 * m}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{m - 20}" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle">h</text>',
    ]
    for k in range(int(math.floor(x0)), int(math.ceil(x1)) + 1):
        if x0 <= k <= x1:
            parts.append(f'<text x="{X(10.0**k):.1f}" y="{height - m + 15}" text-anchor="middle">1e{k}</text>')
    for k in range(int(math.floor(y0)), int(math.ceil(y1)) + 1):
        if y0 <= k <= y1:
            parts.append(f'<text x="{m - 5}" y="{Y(10.0**k):.1f}" text-anchor="end">1e{k}</text>')
    # slope guides anchored at the finest point of the first series
    hs, vs = next(iter(series.values()))
    ok = [(h, v) for h, v in zip(hs, vs) if h > 0 and v > 0 and np.isfinite(v)]
    if ok:
        ha, va = min(ok)
        hb = max(h for h, _ in ok)
        for slope, dash in ((1, "4,3"), (2, "1,3")):
            vb = va * 0.5 * (hb / ha) ** slope
            parts.append(
                f'<polyline points="{X(ha):.1f},{Y(va * 0.5):.1f} {X(hb):.1f},{Y(vb):.1f}" fill="none" '
                f'stroke="gray" stroke-dasharray="{dash}"><title>slope {slope}</title></polyline>'
            )
            parts.append(f'<text x="{X(hb) + 3:.1f}" y="{Y(vb):.1f}" fill="gray">h^{slope}</text>')
    for i, (label, (hs, vs)) in enumerate(series.items()):
        col = _COLORS[i % len(_COLORS)]
        good = [(h, v) for h, v in zip(hs, vs) if h > 0 and v > 0 and np.isfinite(v)]
        coords = " ".join(f"{X(h):.1f},{Y(v):.1f}" for h, v in good)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        for h, v in good:
            parts.append(f'<circle cx="{X(h):.1f}" cy="{Y(v):.1f}" r="2.5" fill="{col}"><title>{h:.4g}, {v:.4g}</title></circle>')
        parts.append(f'<text x="{m + 10}" y="{m + 15 + 14 * i}" fill="{col}">{label}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")
