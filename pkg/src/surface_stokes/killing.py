"""Detection and removal of discrete Killing modes."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .assembly import FeSystem
from .fem import FeFunction
from .solver import (
    EigenSet,
    SaddleFactorization,
    StokesSolution,
    project_analytic_killing,
    project_discrete_killing,
    solve_eigen,
    solve_stokes,
)

log = logging.getLogger(__name__)

MODES = ("none", "manual_analytic", "known_dim", "threshold", "forcing_filter")
N_CANDIDATES = 3  # a closed surface has at most three Killing fields


@dataclass(frozen=True)
class FilterPolicy:
    mode: str = "none"
    dim: int = 0  # known_dim only
    alpha: float = 1.5  # threshold only

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown filter mode {self.mode!r}")
        if self.mode == "known_dim" and self.dim not in (0, 1, 2, 3):
            raise ValueError("known dimension must be 0..3")
        if self.mode == "threshold" and not 1.0 <= self.alpha < 2.0:
            raise ValueError("alpha must lie in [1, 2)")

    @classmethod
    def parse(cls, text: str) -> "FilterPolicy":
        """CLI syntax: none | manual | known:<d> | auto:<alpha> | forcing."""
        if text in ("none", ""):
            return cls("none")
        if text == "manual":
            return cls("manual_analytic")
        if text == "forcing":
            return cls("forcing_filter")
        kind, _, arg = text.partition(":")
        if kind == "known" and arg:
            return cls("known_dim", dim=int(arg))
        if kind == "auto" and arg:
            return cls("threshold", alpha=float(_fraction(arg)))
        raise ValueError(f"cannot parse filter {text!r}")

    def label(self) -> str:
        if self.mode == "known_dim":
            return f"known:{self.dim}"
        if self.mode == "threshold":
            return f"auto:{self.alpha:g}"
        return {"manual_analytic": "manual", "forcing_filter": "forcing"}.get(self.mode, self.mode)


def _fraction(text):
    if "/" in text:
        a, b = text.split("/")
        return float(a) / float(b)
    return float(text)


@dataclass
class FilterReport:
    policy: str
    h: float
    selected: tuple  # 1-based indices J_h
    eigenvalues: list
    threshold: Optional[float]
    diagnostics: list = field(default_factory=list)
    level: Optional[int] = None
    extra: dict = field(default_factory=dict)
    filtered: Optional[FeFunction] = field(default=None, repr=False)

    def to_dict(self):
        keys = ("policy", "level", "h", "selected", "eigenvalues", "threshold", "diagnostics", "extra")
        d = {k: getattr(self, k) for k in keys}
        d["selected"] = list(self.selected)
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_reports(reports: Sequence[FilterReport], path) -> None:
    """One JSON object per line."""
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def _values(eigs) -> np.ndarray:
    return np.asarray(eigs.values if isinstance(eigs, EigenSet) else eigs, float)


def threshold_value(h: float, alpha: float) -> float:
    return h**alpha - 2.0 * h * h


def threshold_select(eigs, h: float, alpha: float) -> tuple:
    """J = {i <= 3 : Lambda_i <= h^alpha - 2 h^2}, 1-based; negatives pass."""
    lam = _values(eigs)
    if len(lam) < N_CANDIDATES:
        raise ValueError("need at least three eigenpairs")
    if not 0 < h <= 1:
        raise ValueError("h must lie in (0, 1]")
    if not 1.0 <= alpha < 2.0:
        raise ValueError("alpha must lie in [1, 2)")
    t = threshold_value(h, alpha)
    return tuple(i + 1 for i in range(N_CANDIDATES) if lam[i] <= t)


def threshold_diagnostics(eigs, h, alpha):
    lam = _values(eigs)
    t = threshold_value(h, alpha)
    return [
        {"index": i + 1, "lam": float(lam[i]), "threshold": t, "margin": t - float(lam[i]), "selected": bool(lam[i] <= t)}
        for i in range(min(N_CANDIDATES, len(lam)))
    ]


def filter_velocity(system: FeSystem, eigs: Optional[EigenSet], U_h2: StokesSolution | FeFunction,
                    policy: FilterPolicy, *, level: Optional[int] = None) -> FilterReport:
    """Remove (approximate) Killing components from U^{h^2} according to ``policy``."""
    U = U_h2.U if isinstance(U_h2, StokesSolution) else U_h2
    h = system.h
    lam = [] if eigs is None else [float(v) for v in eigs.values]
    if policy.mode == "none":
        return FilterReport("none", h, (), lam, None, level=level, filtered=U)
    if policy.mode == "manual_analytic":
        proj = project_analytic_killing(system, U)
        return FilterReport(
            policy.label(), h, tuple(range(1, system.killing.dim + 1)), lam, None, level=level,
            extra={"killing_coefficients": proj.coefficients.tolist(), "pk_norm": proj.norm},
            filtered=proj.remainder,
        )
    if eigs is None:
        raise ValueError(f"policy {policy.mode} needs eigenpairs")
    if policy.mode == "known_dim":
        if policy.dim > len(eigs):
            raise ValueError(f"known_dim({policy.dim}) exceeds the {len(eigs)} available eigenpairs")
        sel = tuple(range(1, policy.dim + 1))
        out = project_discrete_killing(system, eigs, sel, U)
        return FilterReport(policy.label(), h, sel, lam, None, level=level, filtered=out)
    if policy.mode == "threshold":
        sel = threshold_select(eigs, h, policy.alpha)
        diag = threshold_diagnostics(eigs, h, policy.alpha)
        out = project_discrete_killing(system, eigs, sel, U)
        rep = FilterReport(policy.label(), h, sel, lam, threshold_value(h, policy.alpha), diag, level=level, filtered=out)
        log.info("threshold filter h=%.4g J=%s margins=%s", h, sel, [d["margin"] for d in diag])
        return rep
    raise ValueError("use forcing_filter_pipeline for the forcing filter")


def comparison_sides(lam: float, h: float):
    """Both sides of the two-sided Killing-mode comparison with eps = h^(2/3)."""
    e = h ** (2.0 / 3.0)
    left = lam / (lam + e) ** 2
    right = 1.0 / (lam + h * h) - left
    return left, right


def forcing_diagnostics(eigs, h):
    lam = _values(eigs)
    e = h ** (2.0 / 3.0)
    rows = []
    for i in range(min(N_CANDIDATES, len(lam))):
        L = float(lam[i])
        left, right = comparison_sides(L, h)
        rows.append({
            "index": i + 1,
            "lam": L,
            "left": left,
            "right": right,
            "margin": right - left,
            "selected": bool(left <= right),
            # algebraic rearrangement of the same comparison
            "rearranged_selected": bool(L * L + 2.0 * L * (h * h - e) <= e * e),
            # the rearranged form as printed, linear in Lambda
            "printed_form_selected": bool(L + 2.0 * L * (h * h - e) <= e * e),
        })
    return rows


@dataclass
class PipelineResult:
    W: FeFunction
    U_f: FeFunction
    pk_f_estimate: FeFunction  # eps * U_f
    U_h2: StokesSolution
    eigs: EigenSet
    filtered: FeFunction
    report: FilterReport
    epsilon_f: float


def forcing_filter_pipeline(mesh, system: FeSystem, h: Optional[float] = None, *, k: int = N_CANDIDATES,
                            level: Optional[int] = None, full: bool = False):
    """Filtering for forcings that are not orthogonal to the Killing fields.

    1. U_f with eps = h^(2/3); eps*U_f estimates P_K f.
    2. W with load f - eps*U_f and the same eps.
    3. U^{h^2} with eps = h^2 and its lowest eigenpairs (same factorization).
    4. mode i is Killing iff Lambda/(Lambda+e)^2 <= 1/(Lambda+h^2) - Lambda/(Lambda+e)^2.
    5. remove the selected modes from U^{h^2}.

    Returns (W, filtered U, report), or the full PipelineResult if ``full``.
    """
    h = system.h if h is None else h
    ef = h ** (2.0 / 3.0)
    fac_f = SaddleFactorization(system, ef)
    sol_f = solve_stokes(system, ef, factorization=fac_f)
    pk_est = FeFunction(ef * sol_f.U.coeffs, system.dofmap, system.mesh)
    sol_w = solve_stokes(system, ef, f_vec=system.f_vec - ef * (system.Mv @ sol_f.U.coeffs), factorization=fac_f)
    del fac_f
    e2 = h * h
    fac2 = SaddleFactorization(system, e2)
    sol2 = solve_stokes(system, e2, factorization=fac2)
    eigs = solve_eigen(system, k, factorization=fac2)
    diag = forcing_diagnostics(eigs, h)
    sel = tuple(d["index"] for d in diag if d["selected"])
    filtered = project_discrete_killing(system, eigs, sel, sol2.U)
    report = FilterReport(
        "forcing", h, sel, [float(v) for v in eigs.values], None, diag, level=level,
        extra={"epsilon_f": ef, "printed_form_selected": [i for i, d in enumerate(diag, 1) if d["printed_form_selected"]]},
        filtered=filtered,
    )
    log.info("forcing filter h=%.4g J=%s", h, sel)
    if full:
        return PipelineResult(sol_w.U, sol_f.U, pk_est, sol2, eigs, filtered, report, ef)
    return sol_w.U, filtered, report
