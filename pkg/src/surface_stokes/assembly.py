"""Sparse assembly of the interior penalty BDM Stokes forms on Gamma."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .fem import DofMap, FaceBasis, FeFunction
from .geometry import ExactSolution, KillingBasis, SurfaceGeometry, closest_point, exact_fields, killing_basis
from .mesh import EdgeFrames, MeshMetrics, TriSurfaceMesh, edge_frames, metrics
from .quadrature import edge_rule, face_rule

log = logging.getLogger(__name__)

DEFAULT_RHO = 10.0
JUMP_MODES = ("projected", "full")


@dataclass
class FaceQuadrature:
    """Face quadrature data shared by loads and error measurement."""

    bary: np.ndarray  # (q, 3)
    weights: np.ndarray  # (F, q) including face areas
    points: np.ndarray  # (F, q, 3) on Gamma
    values: np.ndarray  # (F, q, 6, 3) basis values
    geometry: object  # GeometryEval over the flattened points

    @property
    def lifted(self):
        return self.geometry.point_on_gamma.reshape(self.points.shape)


@dataclass
class FeSystem:
    mesh: TriSurfaceMesh
    dofmap: DofMap
    surface: SurfaceGeometry
    rho: float
    h: float
    A: sp.csr_matrix
    J: sp.csr_matrix
    Mv: sp.csr_matrix
    B: sp.csr_matrix
    f_vec: np.ndarray
    g_vec: np.ndarray
    k_gram: np.ndarray  # (dim K, n_velocity)
    killing: KillingBasis
    exact: ExactSolution
    basis: FaceBasis
    quad: FaceQuadrature
    metrics: MeshMetrics
    frames: EdgeFrames
    jump_mass: sp.csr_matrix  # 2 * int [W].[V]; J = J_consistency + (rho/h) jump_mass
    jump_mode: str = "projected"
    killing_forcing: float = 0.0
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def pressure_weights(self):
        return self.mesh.face_areas

    def killing_interpolants(self):
        """BDM interpolants of the Piola pullbacks of the Killing basis."""
        if "kint" not in self._cache:
            from .fem import interpolate_bdm

            fields = []
            for j in range(self.killing.dim):
                fields.append(interpolate_bdm(self.mesh, self.dofmap, _pullback_field(self, j)))
            self._cache["kint"] = fields
        return self._cache["kint"]

    def killing_gram_exact(self):
        """Gram matrix of the analytic Killing basis on gamma."""
        if "kgram" not in self._cache:
            from .geometry import surface_quadrature

            pts, w = surface_quadrature(self.surface, 64)
            kv = self.killing.evaluate(pts)
            self._cache["kgram"] = np.einsum("iqa,jqa,q->ij", kv, kv, w)
        return self._cache["kgram"]


def _pullback_field(system, j):
    from .geometry import piola_pullback

    def field(face_ids, pts):
        ev = closest_point(system.surface, pts)
        k = system.killing.evaluate(ev.point_on_gamma)[j]
        return piola_pullback(system.surface, ev, system.mesh.face_normals[face_ids], k)

    return field


def _scatter_faces(dofmap, local, n_rows=None, n_cols=None):
    # the face basis already carries the orientation signs
    dofs = dofmap.face_dofs
    vals = local
    rows = np.broadcast_to(dofs[:, :, None], vals.shape)
    cols = np.broadcast_to(dofs[:, None, :], vals.shape)
    n = dofmap.n_velocity
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


def _edge_bary(local_edge, r):
    """Barycentric coordinates (E, q, 3) at relative position r along local edges."""
    ne = len(local_edge)
    b = np.zeros((ne, len(r), 3))
    idx = np.arange(ne)[:, None]
    b[idx, :, ((local_edge + 1) % 3)[:, None]] = 1.0 - r[None, :]
    b[idx, :, ((local_edge + 2) % 3)[:, None]] = r[None, :]
    return b


def edge_side_values(mesh, basis, frames, s):
    """Basis values on both sides of every edge at parameters ``s``."""
    vp = basis.values(_edge_bary(mesh.edge_local[:, 0], s + 0.5), frames.face_plus)
    vm = basis.values(_edge_bary(mesh.edge_local[:, 1], 0.5 - s), frames.face_minus)
    return vp, vm


def jump_projector(mesh, frames, mode):
    """Per-edge projector applied to jumps, (E, 3, 3)."""
    ne = mesh.n_edges
    if mode == "full":
        return np.broadcast_to(np.eye(3), (ne, 3, 3))
    if mode != "projected":
        raise ValueError(f"unknown jump mode {mode!r}")
    n = mesh.face_normals[frames.face_plus] + mesh.face_normals[frames.face_minus]
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    return np.eye(3)[None] - n[:, :, None] * n[:, None, :]


def edge_blocks(mesh, dofmap, basis, frames, mode, edges):
    """Local 12x12 edge matrices of the consistency and jump-mass terms.

    Returns (consistency, jump_mass, dofs) for the selected edges; rows and
    columns follow the six plus-face DOFs, then the six minus-face DOFs.
    """
    s, w = edge_rule(3)
    defs = basis.deformations
    Pe = jump_projector(mesh, frames, mode)[edges]
    fp, fm = frames.face_plus[edges], frames.face_minus[edges]
    vp = basis.values(_edge_bary(mesh.edge_local[edges, 0], s + 0.5), fp)
    vm = basis.values(_edge_bary(mesh.edge_local[edges, 1], 0.5 - s), fm)
    jump = np.concatenate([vp, -vm], axis=2)  # (e, q, 12, 3)
    jump = np.einsum("eab,eqjb->eqja", Pe, jump)
    avg = np.concatenate(
        [
            0.5 * np.einsum("ejab,eb->eja", defs[fp], frames.conormal_plus[edges]),
            -0.5 * np.einsum("ejab,eb->eja", defs[fm], frames.conormal_minus[edges]),
        ],
        axis=1,
    )  # (e, 12, 3)
    wq = w[None, :] * frames.length[edges, None]  # (e, q)
    jint = np.einsum("eq,eqja->eja", wq, jump)  # avg is constant along the edge
    cross = np.einsum("eia,eja->eij", avg, jint)
    cons = -2.0 * (cross + np.swapaxes(cross, 1, 2))
    jmass = 2.0 * np.einsum("eq,eqia,eqja->eij", wq, jump, jump)
    dofs = np.concatenate([dofmap.face_dofs[fp], dofmap.face_dofs[fm]], axis=1)
    return cons, jmass, dofs


def _edge_forms(mesh, dofmap, basis, frames, mode, chunk=20000):
    ne = mesh.n_edges
    rows_all, cols_all, cons_all, jm_all = [], [], [], []
    for start in range(0, ne, chunk):
        cons, jmass, dofs = edge_blocks(mesh, dofmap, basis, frames, mode, np.arange(start, min(ne, start + chunk)))
        shape = cons.shape
        rows_all.append(np.broadcast_to(dofs[:, :, None], shape).ravel())
        cols_all.append(np.broadcast_to(dofs[:, None, :], shape).ravel())
        cons_all.append(cons.ravel())
        jm_all.append(jmass.ravel())
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    n = dofmap.n_velocity
    Jc = sp.coo_matrix((np.concatenate(cons_all), (rows, cols)), shape=(n, n)).tocsr()
    Jm = sp.coo_matrix((np.concatenate(jm_all), (rows, cols)), shape=(n, n)).tocsr()
    return Jc, Jm


def face_quadrature(mesh, basis, surface) -> FaceQuadrature:
    bary, w = face_rule()
    pts = basis.points(bary)
    weights = mesh.face_areas[:, None] * w[None, :]
    ev = closest_point(surface, pts.reshape(-1, 3))
    return FaceQuadrature(bary, weights, pts, basis.values(bary), ev)


def assemble(
    mesh: TriSurfaceMesh,
    dofmap: Optional[DofMap] = None,
    surface: Optional[SurfaceGeometry] = None,
    rho: float = DEFAULT_RHO,
    *,
    killing_forcing: float = 0.0,
    jump: str = "projected",
    exact: Optional[ExactSolution] = None,
) -> FeSystem:
    """Assemble every operator and load of the method on ``mesh``.

    ``killing_forcing`` adds that multiple of the first Killing field
    (y, -x, 0) to the momentum forcing.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    surface = surface or mesh.surface
    if surface is None:
        raise ValueError("a SurfaceGeometry is required")
    dofmap = dofmap or DofMap.build(mesh)
    basis = FaceBasis(mesh, dofmap)
    met = metrics(mesh)
    frames = edge_frames(mesh)
    h = met.h
    area = mesh.face_areas

    defs = basis.deformations
    A_loc = 2.0 * area[:, None, None] * np.einsum("fiab,fjab->fij", defs, defs)
    A = _scatter_faces(dofmap, A_loc)

    quad = face_quadrature(mesh, basis, surface)
    V = quad.values
    M_loc = np.einsum("fq,fqia,fqja->fij", quad.weights, V, V)
    Mv = _scatter_faces(dofmap, M_loc)

    # B[T, i] = int_T div v_i
    Bvals = (area[:, None] * basis.div).ravel()
    Brows = np.repeat(np.arange(mesh.n_faces), 6)
    B = sp.coo_matrix((Bvals, (Brows, dofmap.face_dofs.ravel())), shape=(dofmap.n_pressure, dofmap.n_velocity)).tocsr()

    Jc, Jm = _edge_forms(mesh, dofmap, basis, frames, jump)
    J = (Jc + (rho / h) * Jm).tocsr()

    exact = exact or exact_fields(surface)
    kb = killing_basis(surface)
    lifted = quad.geometry.point_on_gamma
    f_at = exact.f(lifted)
    if killing_forcing:
        f_at = f_at + killing_forcing * killing_basis(surface).evaluate(lifted)[0]
    f_at = f_at.reshape(quad.points.shape)
    f_loc = np.einsum("fq,fqja,fqa->fj", quad.weights, V, f_at)
    f_vec = np.bincount(dofmap.face_dofs.ravel(), weights=f_loc.ravel(), minlength=dofmap.n_velocity)
    g_at = exact.g(lifted).reshape(quad.weights.shape)
    g_vec = (quad.weights * g_at).sum(axis=1)

    kv = kb.evaluate(lifted).reshape((kb.dim,) + quad.points.shape)
    k_gram = np.zeros((kb.dim, dofmap.n_velocity))
    for j in range(kb.dim):
        kl = np.einsum("fq,fqia,fqa->fi", quad.weights, V, kv[j])
        k_gram[j] = np.bincount(dofmap.face_dofs.ravel(), weights=kl.ravel(), minlength=dofmap.n_velocity)

    system = FeSystem(
        mesh=mesh, dofmap=dofmap, surface=surface, rho=rho, h=h,
        A=A, J=J, Mv=Mv, B=B, f_vec=f_vec, g_vec=g_vec, k_gram=k_gram,
        killing=kb, exact=exact, basis=basis, quad=quad, metrics=met,
        frames=frames, jump_mass=Jm, jump_mode=jump, killing_forcing=killing_forcing,
    )
    system._cache["J_consistency"] = Jc
    _check_symmetry(system)
    return system


def _check_symmetry(system, tol=1e-12):
    for name in ("A", "J", "Mv"):
        M = getattr(system, name)
        scale = abs(M).max() or 1.0
        asym = abs(M - M.T).max() / scale
        if asym > tol:
            log.warning("%s is not symmetric: relative asymmetry %.3e", name, asym)


class EpsilonOperator:
    """A + J + eps*Mv as a lazy operator."""

    def __init__(self, system: FeSystem, epsilon: float):
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        self.system = system
        self.epsilon = float(epsilon)
        self.shape = system.A.shape

    def matvec(self, x):
        s = self.system
        return s.A @ x + s.J @ x + self.epsilon * (s.Mv @ x)

    __matmul__ = matvec

    def quadratic(self, x):
        return float(x @ self.matvec(x))

    def tocsr(self):
        s = self.system
        return (s.A + s.J + self.epsilon * s.Mv).tocsr()


def epsilon_system(system: FeSystem, epsilon: float) -> EpsilonOperator:
    return EpsilonOperator(system, epsilon)


def write_matrix_market(system: FeSystem, directory) -> None:
    from pathlib import Path
    from scipy.io import mmwrite

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in ("A", "J", "Mv", "B"):
        mmwrite(str(d / f"{name}.mtx"), getattr(system, name))
