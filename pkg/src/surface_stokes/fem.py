"""Lowest-order BDM velocity space and P0 pressure space on a polyhedral surface.

Velocity DOFs are the moments of the normal flux against {1, s} on every
edge, where ``s`` is the arclength parameter in [-1/2, 1/2] running in the
global edge direction and the flux is measured with the conormal of the
edge's "plus" face (the face traversing the edge in the global direction).
Global DOF ``2*e + m`` is moment ``m`` on edge ``e``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .mesh import TriSurfaceMesh

# reference triangle (0,0), (1,0), (0,1); edge k is opposite vertex k and runs
# from vertex k+1 to vertex k+2 (counter-clockwise)
_REF_V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def _monomials(xi, eta):
    """Values of the 6 affine monomial fields, shape (..., 6, 2)."""
    one = np.ones_like(xi)
    zero = np.zeros_like(xi)
    comps = [
        (one, zero), (zero, one), (xi, zero), (eta, zero), (zero, xi), (zero, eta)
    ]
    return np.stack([np.stack(c, -1) for c in comps], -2)


_MONO_GRAD = np.array(
    [
        [[0, 0], [0, 0]],
        [[0, 0], [0, 0]],
        [[1, 0], [0, 0]],
        [[0, 1], [0, 0]],
        [[0, 0], [1, 0]],
        [[0, 0], [0, 1]],
    ],
    dtype=float,
)  # d(component a)/d(reference coordinate b)


class ReferenceBdm1:
    """BDM1 shape functions on the reference triangle, dual to edge moments."""

    def __init__(self):
        xg, wg = np.polynomial.legendre.leggauss(2)
        self.s = 0.5 * xg
        self.edge_w = 0.5 * wg
        D = np.zeros((6, 6))
        for k in range(3):
            pa, pb = _REF_V[(k + 1) % 3], _REF_V[(k + 2) % 3]
            t = pb - pa
            length = np.linalg.norm(t)
            n = np.array([t[1], -t[0]]) / length
            pts = pa + (self.s[:, None] + 0.5) * t
            mono = _monomials(pts[:, 0], pts[:, 1])  # (q, 6, 2)
            flux = mono @ n  # (q, 6)
            w = self.edge_w * length
            D[2 * k] = w @ flux
            D[2 * k + 1] = (w * self.s) @ flux
        self.dof_matrix = D
        # shape j = sum_m coeffs[m, j] * monomial m
        self.coeffs = np.linalg.inv(D)
        self.grads = np.einsum("mj,mab->jab", self.coeffs, _MONO_GRAD)  # (6, 2, 2)
        self.divergence = np.trace(self.grads, axis1=1, axis2=2)

    def values(self, xi, eta):
        """Shape function values, shape (..., 6, 2)."""
        return np.einsum("...mc,mj->...jc", _monomials(np.asarray(xi, float), np.asarray(eta, float)), self.coeffs)

    def dofs(self, field):
        """Apply the 6 DOF functionals to ``field(xi, eta) -> (..., 2)`` using 4-point Gauss."""
        xg, wg = np.polynomial.legendre.leggauss(4)
        s = 0.5 * xg
        out = np.zeros(6)
        for k in range(3):
            pa, pb = _REF_V[(k + 1) % 3], _REF_V[(k + 2) % 3]
            t = pb - pa
            length = np.linalg.norm(t)
            n = np.array([t[1], -t[0]]) / length
            pts = pa + (s[:, None] + 0.5) * t
            flux = field(pts[:, 0], pts[:, 1]) @ n
            w = 0.5 * wg * length
            out[2 * k] = w @ flux
            out[2 * k + 1] = (w * s) @ flux
        return out


REFERENCE = ReferenceBdm1()


@dataclass
class DofMap:
    n_velocity: int
    n_pressure: int
    face_dofs: np.ndarray  # (F, 6) global velocity DOF per local shape function
    face_signs: np.ndarray  # (F, 6) +-1

    @classmethod
    def build(cls, mesh: TriSurfaceMesh) -> "DofMap":
        e = mesh.face_edges
        dofs = np.empty((mesh.n_faces, 6), dtype=np.int64)
        signs = np.ones((mesh.n_faces, 6))
        dofs[:, 0::2] = 2 * e
        dofs[:, 1::2] = 2 * e + 1
        # constant moment flips with the conormal; the s-moment flips twice
        signs[:, 0::2] = mesh.face_edge_sign
        return cls(2 * mesh.n_edges, mesh.n_faces, dofs, signs)


class FaceBasis:
    """Piola-mapped, sign-corrected global basis restricted to every face."""

    def __init__(self, mesh: TriSurfaceMesh, dofmap: DofMap):
        self.mesh = mesh
        self.dofmap = dofmap
        c = mesh.corners
        self.DA = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]], axis=2)  # (F, 3, 2)
        self.J = 2.0 * mesh.face_areas
        self.DA_pinv = np.linalg.pinv(self.DA)  # (F, 2, 3)
        s = dofmap.face_signs
        g = np.einsum("fab,jbc,fcd->fjad", self.DA, REFERENCE.grads, self.DA_pinv)
        self.grads = g * (s / self.J[:, None])[:, :, None, None]  # (F, 6, 3, 3)
        self.div = REFERENCE.divergence[None, :] * s / self.J[:, None]  # (F, 6)

    @cached_property
    def deformations(self):
        g = self.grads
        return 0.5 * (g + np.swapaxes(g, 2, 3))

    def values(self, bary, faces=None):
        """Basis values at barycentric points.

        ``bary`` is (q, 3) shared by all faces or (F, q, 3) per face; returns
        (F, q, 6, 3).
        """
        faces = slice(None) if faces is None else faces
        bary = np.asarray(bary, float)
        ref = REFERENCE.values(bary[..., 1], bary[..., 2])  # (..., q, 6, 2)
        DA = self.DA[faces]
        scale = self.dofmap.face_signs[faces] / self.J[faces][:, None]
        if ref.ndim == 3:
            v = np.einsum("fab,qjb->fqja", DA, ref)
        else:
            v = np.einsum("fab,fqjb->fqja", DA, ref)
        return v * scale[:, None, :, None]

    def points(self, bary, faces=None):
        faces = slice(None) if faces is None else faces
        c = self.mesh.corners[faces]
        bary = np.asarray(bary, float)
        if bary.ndim == 2:
            return np.einsum("qk,fkd->fqd", bary, c)
        return np.einsum("fqk,fkd->fqd", bary, c)


@dataclass
class FeFunction:
    coeffs: np.ndarray
    dofmap: DofMap
    mesh: TriSurfaceMesh
    kind: str = "velocity"

    def __post_init__(self):
        n = self.dofmap.n_velocity if self.kind == "velocity" else self.dofmap.n_pressure
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (n,):
            raise ValueError(f"expected {n} coefficients, got {self.coeffs.shape}")

    def local(self):
        """Local coefficients (F, 6) multiplying the FaceBasis functions."""
        return self.coeffs[self.dofmap.face_dofs]

    def evaluate(self, basis: FaceBasis, bary):
        """Values (F, q, 3) at barycentric points of every face."""
        return np.einsum("fqja,fj->fqa", basis.values(bary), self.local())

    def gradients(self, basis: FaceBasis):
        return np.einsum("fjab,fj->fab", basis.grads, self.local())

    def divergence(self, basis: FaceBasis):
        return np.einsum("fj,fj->f", basis.div, self.local())


def interpolate_bdm(mesh: TriSurfaceMesh, dofmap: DofMap, field, n_gauss: int = 4) -> FeFunction:
    """BDM interpolant from edge moments of a face-wise tangent field.

    ``field(face_ids, points)`` returns vectors tangent to the given faces at
    the given points (both arrays of matching leading length). Both sides of
    an edge are sampled and their fluxes averaged.
    """
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    s = 0.5 * xg
    p0 = mesh.vertices[mesh.edges[:, 0]]
    p1 = mesh.vertices[mesh.edges[:, 1]]
    vec = p1 - p0
    length = np.linalg.norm(vec, axis=1)
    t = vec / length[:, None]
    fp, fm = mesh.edge_faces[:, 0], mesh.edge_faces[:, 1]
    nplus = np.cross(t, mesh.face_normals[fp])
    nminus = np.cross(-t, mesh.face_normals[fm])
    pts = 0.5 * (p0 + p1)[:, None, :] + s[None, :, None] * vec[:, None, :]  # (E, q, 3)
    ne, nq = pts.shape[:2]
    flat = pts.reshape(-1, 3)
    qp = np.asarray(field(np.repeat(fp, nq), flat)).reshape(ne, nq, 3)
    qm = np.asarray(field(np.repeat(fm, nq), flat)).reshape(ne, nq, 3)
    flux = 0.5 * (np.einsum("eqa,ea->eq", qp, nplus) - np.einsum("eqa,ea->eq", qm, nminus))
    w = 0.5 * wg[None, :] * length[:, None]
    coeffs = np.empty(2 * ne)
    coeffs[0::2] = (w * flux).sum(1)
    coeffs[1::2] = (w * s[None, :] * flux).sum(1)
    return FeFunction(coeffs, dofmap, mesh)


def project_pressure(mesh: TriSurfaceMesh, dofmap: DofMap, scalar) -> FeFunction:
    """Face means of ``scalar(points) -> values`` (P0 L2 projection)."""
    from .quadrature import face_rule

    bary, w = face_rule()
    pts = np.einsum("qk,fkd->fqd", bary, mesh.corners)
    vals = np.asarray(scalar(pts.reshape(-1, 3))).reshape(pts.shape[:2])
    return FeFunction(vals @ w, dofmap, mesh, kind="pressure")


def eval_velocity_basis(mesh: TriSurfaceMesh, dofmap: DofMap, face: int, bary):
    """Values (6, 3), surface gradients (6, 3, 3) and divergences (6,) on one face."""
    basis = FaceBasis(_single_face(mesh, face), _single_dofmap(dofmap, face))
    vals = basis.values(np.asarray(bary, float)[None, :])[0, 0]
    return vals, basis.grads[0], basis.div[0]


class _FaceView:
    def __init__(self, mesh, face):
        self.corners = mesh.corners[face:face + 1]
        self.face_areas = mesh.face_areas[face:face + 1]


def _single_face(mesh, face):
    return _FaceView(mesh, face)


def _single_dofmap(dofmap, face):
    return DofMap(dofmap.n_velocity, dofmap.n_pressure, dofmap.face_dofs[face:face + 1], dofmap.face_signs[face:face + 1])
