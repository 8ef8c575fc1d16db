"""Icosphere triangulations interpolating the ellipsoid, plus mesh data."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .geometry import SurfaceGeometry, closest_point


class MeshError(ValueError):
    pass


@dataclass
class TriSurfaceMesh:
    """Closed oriented triangulation.

    ``faces`` are listed counter-clockwise seen from outside. Local edge
    ``k`` of a face is the one opposite its vertex ``k``, traversed from
    vertex ``k+1`` to ``k+2``. Global edges run from the lower to the
    higher vertex index.
    """

    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3)
    surface: SurfaceGeometry | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        self._build_edges()

    def _build_edges(self):
        f = self.faces
        a = f[:, [1, 2, 0]]
        b = f[:, [2, 0, 1]]
        lo = np.minimum(a, b).ravel()
        hi = np.maximum(a, b).ravel()
        key = lo * len(self.vertices) + hi
        uniq, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
        if np.any(counts != 2):
            raise MeshError("mesh is not watertight: every edge needs exactly two faces")
        nv = len(self.vertices)
        self.edges = np.stack([uniq // nv, uniq % nv], axis=1)
        self.face_edges = inverse.reshape(-1, 3)
        # +1 where the face traverses its edge in the global direction
        self.face_edge_sign = np.where(a < b, 1, -1).astype(np.int64)
        ne = len(self.edges)
        plus = np.full(ne, -1)
        minus = np.full(ne, -1)
        fid = np.repeat(np.arange(len(f)), 3)
        flat_e = self.face_edges.ravel()
        flat_s = self.face_edge_sign.ravel()
        plus[flat_e[flat_s > 0]] = fid[flat_s > 0]
        minus[flat_e[flat_s < 0]] = fid[flat_s < 0]
        if np.any(plus < 0) or np.any(minus < 0):
            raise MeshError("inconsistent face orientation")
        self.edge_faces = np.stack([plus, minus], axis=1)
        # local index of the edge inside each of its two faces
        loc = np.tile(np.arange(3), len(f))
        el = np.empty((ne, 2), dtype=np.int64)
        el[flat_e[flat_s > 0], 0] = loc[flat_s > 0]
        el[flat_e[flat_s < 0], 1] = loc[flat_s < 0]
        self.edge_local = el

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_faces(self):
        return len(self.faces)

    @cached_property
    def corners(self):
        return self.vertices[self.faces]  # (F, 3, 3)

    @cached_property
    def face_normals(self):
        c = self.corners
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def face_areas(self):
        c = self.corners
        return 0.5 * np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)

    @cached_property
    def centroids(self):
        return self.corners.mean(axis=1)

    @cached_property
    def diameters(self):
        c = self.corners
        e = np.stack([c[:, 2] - c[:, 1], c[:, 0] - c[:, 2], c[:, 1] - c[:, 0]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces


_PHI = (1.0 + 5**0.5) / 2.0
_ICO_V = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ],
    dtype=float,
)
_ICO_F = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)


def _orient_outward(vertices, faces):
    c = vertices[faces]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    flip = np.einsum("ij,ij->i", n, c.mean(axis=1)) < 0
    faces = faces.copy()
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return faces


def icosphere(surface: SurfaceGeometry, level: int, jitter: float = 0.0, seed: int = 0) -> TriSurfaceMesh:
    """Icosahedron refined ``level`` times by 1->4 splits, vertices on gamma.

    ``jitter`` > 0 moves the twelve base vertices tangentially by up to
    that fraction of the base edge length (fixed ``seed``) and projects
    them back to gamma before refining. The regular icosphere is invariant
    under the full icosahedral group, which decouples the Killing fields
    from forcings that carry no rotational component of that group; the
    jitter removes this artificial symmetry while keeping the refinement
    nested and quasi-uniform.
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    if not 0.0 <= jitter < 0.25:
        raise ValueError("jitter must lie in [0, 0.25)")
    v = _ICO_V / np.linalg.norm(_ICO_V, axis=1, keepdims=True)
    v = v * np.array([1.0, 1.0, surface.c])
    if jitter > 0:
        rng = np.random.default_rng(seed)
        edge = np.linalg.norm(v[_ICO_F[0, 0]] - v[_ICO_F[0, 1]])
        ev = closest_point(surface, v)
        step = rng.uniform(-1.0, 1.0, v.shape)
        step = np.einsum("nij,nj->ni", ev.Pi, step)
        step *= jitter * edge / np.maximum(np.linalg.norm(step, axis=1, keepdims=True), 1e-300)
        v = closest_point(surface, v + step).point_on_gamma
    f = _orient_outward(v, _ICO_F)
    for _ in range(level):
        v, f = _subdivide(surface, v, f)
    return TriSurfaceMesh(v, _orient_outward(v, f), surface)


def _subdivide(surface, v, f):
    nv = len(v)
    a = f[:, [0, 1, 2]]
    b = f[:, [1, 2, 0]]
    lo = np.minimum(a, b).ravel()
    hi = np.maximum(a, b).ravel()
    key = lo * nv + hi
    uniq, inverse = np.unique(key, return_inverse=True)
    mids = 0.5 * (v[uniq // nv] + v[uniq % nv])
    mids = closest_point(surface, mids).point_on_gamma
    m = (inverse.reshape(-1, 3) + nv)  # midpoint of edges (0-1), (1-2), (2-0)
    v0, v1, v2 = f[:, 0], f[:, 1], f[:, 2]
    m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
    new_f = np.concatenate(
        [
            np.stack([v0, m01, m20], 1),
            np.stack([v1, m12, m01], 1),
            np.stack([v2, m20, m12], 1),
            np.stack([m01, m12, m20], 1),
        ]
    )
    return np.concatenate([v, mids]), new_f


@dataclass
class MeshMetrics:
    h: float
    h_T: np.ndarray
    sigma1: float
    sigma2: float
    valence_max: int
    min_transversality: float


def metrics(mesh: TriSurfaceMesh) -> MeshMetrics:
    area = mesh.face_areas
    if np.any(area <= 0):
        raise MeshError("degenerate face with zero area")
    h_T = np.sqrt(area)
    valence = np.bincount(mesh.edges.ravel(), minlength=mesh.n_vertices)
    if mesh.surface is not None:
        nu = closest_point(mesh.surface, mesh.centroids).nu
        transv = float(np.einsum("ij,ij->i", nu, mesh.face_normals).min())
    else:
        transv = float("nan")
    return MeshMetrics(
        h=mesh.h,
        h_T=h_T,
        sigma1=float((mesh.diameters / h_T).max()),
        sigma2=float(h_T.max() / h_T.min()),
        valence_max=int(valence.max()),
        min_transversality=transv,
    )


@dataclass
class EdgeFrames:
    """Per-edge geometric data, arrays indexed by global edge."""

    length: np.ndarray  # (E,)
    tangent: np.ndarray  # (E, 3) unit, global direction
    midpoint: np.ndarray  # (E, 3)
    conormal_plus: np.ndarray  # (E, 3)
    conormal_minus: np.ndarray  # (E, 3)
    face_plus: np.ndarray
    face_minus: np.ndarray
    quad_points: np.ndarray  # (E, q, 3)
    quad_weights: np.ndarray  # (E, q) including the length factor
    quad_s: np.ndarray  # (q,) arclength parameter in [-1/2, 1/2], global direction


def edge_frames(mesh: TriSurfaceMesh, n_gauss: int = 3) -> EdgeFrames:
    p0 = mesh.vertices[mesh.edges[:, 0]]
    p1 = mesh.vertices[mesh.edges[:, 1]]
    vec = p1 - p0
    length = np.linalg.norm(vec, axis=1)
    t = vec / length[:, None]
    fp, fm = mesh.edge_faces[:, 0], mesh.edge_faces[:, 1]
    nplus = np.cross(t, mesh.face_normals[fp])
    nminus = np.cross(-t, mesh.face_normals[fm])
    mid = 0.5 * (p0 + p1)
    for n, fc in ((nplus, fp), (nminus, fm)):
        if np.any(np.einsum("ij,ij->i", n, mid - mesh.centroids[fc]) <= 0):
            raise MeshError("conormal does not point out of its face")
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    s = 0.5 * xg
    qp = mid[:, None, :] + s[None, :, None] * vec[:, None, :]
    qw = 0.5 * wg[None, :] * length[:, None]
    return EdgeFrames(length, t, mid, nplus, nminus, fp, fm, qp, qw, s)


def write_off(mesh: TriSurfaceMesh, path) -> None:
    lines = ["OFF", f"{mesh.n_vertices} {mesh.n_faces} {mesh.n_edges}"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_off(path, surface: SurfaceGeometry | None = None) -> TriSurfaceMesh:
    tokens = [ln.split("#")[0].strip() for ln in Path(path).read_text().splitlines()]
    tokens = [t for t in tokens if t]
    if tokens[0] != "OFF":
        raise MeshError("not an OFF file")
    nv, nf = (int(x) for x in tokens[1].split()[:2])
    verts = np.array([[float(x) for x in tokens[2 + i].split()[:3]] for i in range(nv)])
    faces = []
    for i in range(nf):
        row = [int(x) for x in tokens[2 + nv + i].split()]
        if row[0] != 3:
            raise MeshError("only triangular faces are supported")
        faces.append(row[1:4])
    return TriSurfaceMesh(verts, np.array(faces), surface)
