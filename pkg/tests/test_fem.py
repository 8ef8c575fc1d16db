import numpy as np
import pytest
from hypothesis import given, strategies as st

from surface_stokes.assembly import edge_side_values
from surface_stokes.fem import (
    REFERENCE,
    DofMap,
    FaceBasis,
    FeFunction,
    eval_velocity_basis,
    interpolate_bdm,
    project_pressure,
)
from surface_stokes.geometry import SurfaceGeometry, area_ratio, closest_point, exact_fields, piola_pullback
from surface_stokes.mesh import TriSurfaceMesh, edge_frames, icosphere
from surface_stokes.quadrature import face_rule

# tetrahedron whose face 0 is the reference triangle in the z = 0 plane
TET_V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.2, 0.2, -1.0]])
TET_F = np.array([[0, 1, 2], [1, 0, 3], [2, 1, 3], [0, 2, 3]])


def _bary_in_faces(mesh, faces, pts):
    c = mesh.corners[faces]
    DA = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]], axis=2)
    lam = np.einsum("nab,nb->na", np.linalg.pinv(DA), pts - c[:, 0])
    return np.column_stack([1 - lam.sum(1), lam])


def fe_field(U: FeFunction, basis: FaceBasis):
    """The FE function as a face-wise field(face_ids, points)."""

    def field(faces, pts):
        bary = _bary_in_faces(U.mesh, faces, pts)
        vals = basis.values(bary[:, None, :], faces)[:, 0]  # (n, 6, 3)
        return np.einsum("nja,nj->na", vals, U.local()[faces])

    return field


def test_reference_duality():
    for j in range(6):
        dofs = REFERENCE.dofs(lambda xi, eta: REFERENCE.values(xi, eta)[..., j, :])
        assert np.abs(dofs - np.eye(6)[j]).max() <= 1e-13


def test_reference_divergence_is_constant():
    rng = np.random.default_rng(0)
    xi, eta = rng.uniform(0, 0.5, (2, 5))
    step = 1e-6
    fd = ((REFERENCE.values(xi + step, eta)[..., 0] - REFERENCE.values(xi - step, eta)[..., 0])
          + (REFERENCE.values(xi, eta + step)[..., 1] - REFERENCE.values(xi, eta - step)[..., 1])) / (2 * step)
    assert np.abs(fd - REFERENCE.divergence[None, :]).max() < 1e-8


def test_reference_face_reproduces_reference_basis():
    mesh = TriSurfaceMesh(TET_V, TET_F)
    dm = DofMap.build(mesh)
    bary = np.array([0.2, 0.5, 0.3])
    vals, grads, div = eval_velocity_basis(mesh, dm, 0, bary)
    ref = REFERENCE.values(bary[1], bary[2])  # (6, 2)
    signs = dm.face_signs[0]
    assert np.abs(vals[:, :2] - signs[:, None] * ref).max() < 1e-14
    assert np.abs(vals[:, 2]).max() == 0
    assert np.allclose(div, signs * REFERENCE.divergence)
    assert np.allclose(grads[:, :2, :2], signs[:, None, None] * REFERENCE.grads)


@pytest.mark.parametrize("c", [1.0, 2.0])
def test_basis_tangent_and_divergence(c):
    mesh = icosphere(SurfaceGeometry(c), 1)
    dm = DofMap.build(mesh)
    basis = FaceBasis(mesh, dm)
    bary, _ = face_rule()
    vals = basis.values(bary)  # (F, q, 6, 3)
    assert np.abs(np.einsum("fqja,fa->fqj", vals, mesh.face_normals)).max() <= 1e-13
    step = 1e-6
    for f in range(0, mesh.n_faces, 9):
        cen = mesh.centroids[f]
        t1 = mesh.corners[f, 1] - mesh.corners[f, 0]
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(mesh.face_normals[f], t1)
        fd = np.zeros(6)
        for t in (t1, t2):
            bp = _bary_in_faces(mesh, [f], (cen + step * t)[None])
            bm = _bary_in_faces(mesh, [f], (cen - step * t)[None])
            vp = basis.values(bp[:, None, :], [f])[0, 0]
            vm = basis.values(bm[:, None, :], [f])[0, 0]
            fd += (vp - vm) @ t / (2 * step)
        assert np.abs(fd - basis.div[f]).max() < 1e-8
        # gradients are constant: the trace over the face plane is the divergence
        assert np.allclose(np.trace(basis.grads[f], axis1=1, axis2=2), basis.div[f])


def test_dofmap_sharing():
    mesh = icosphere(SurfaceGeometry(1.25), 2)
    dm = DofMap.build(mesh)
    assert dm.n_velocity == 2 * mesh.n_edges and dm.n_pressure == mesh.n_faces
    assert np.all(np.bincount(dm.face_dofs.ravel(), minlength=dm.n_velocity) == 2)


@given(seed=st.integers(0, 2**31), c=st.sampled_from([1.0, 1.1, 2.0]), level=st.integers(0, 2))
def test_normal_continuity_for_random_coefficients(seed, c, level):
    mesh = icosphere(SurfaceGeometry(c), level, jitter=0.05 if seed % 2 else 0.0, seed=seed % 7)
    dm = DofMap.build(mesh)
    basis = FaceBasis(mesh, dm)
    fr = edge_frames(mesh)
    U = FeFunction(np.random.default_rng(seed).normal(size=dm.n_velocity), dm, mesh)
    s, w = np.polynomial.legendre.leggauss(4)
    s, w = 0.5 * s, 0.5 * w
    vp, vm = edge_side_values(mesh, basis, fr, s)
    qp = np.einsum("eqja,ej->eqa", vp, U.local()[fr.face_plus])
    qm = np.einsum("eqja,ej->eqa", vm, U.local()[fr.face_minus])
    flux = np.einsum("eqa,ea->eq", qp, fr.conormal_plus) + np.einsum("eqa,ea->eq", qm, fr.conormal_minus)
    wl = w[None, :] * fr.length[:, None]
    scale = np.abs(U.coeffs).max()
    assert np.abs((wl * flux).sum(1)).max() <= 1e-12 * scale
    assert np.abs((wl * s * flux).sum(1)).max() <= 1e-12 * scale
    if level >= 1:
        # the full vector jump is not zero across non-coplanar faces
        assert np.abs(qp - qm).max() > 1e-6 * scale


@given(seed=st.integers(0, 2**31))
def test_interpolation_is_a_projection(seed):
    mesh = icosphere(SurfaceGeometry(1.25), 1)
    dm = DofMap.build(mesh)
    basis = FaceBasis(mesh, dm)
    U = FeFunction(np.random.default_rng(seed).normal(size=dm.n_velocity), dm, mesh)
    back = interpolate_bdm(mesh, dm, fe_field(U, basis))
    assert np.abs(back.coeffs - U.coeffs).max() <= 1e-12 * max(1.0, np.abs(U.coeffs).max())


def test_interpolating_zero():
    mesh = icosphere(SurfaceGeometry(1.0), 1)
    dm = DofMap.build(mesh)
    out = interpolate_bdm(mesh, dm, lambda f, x: np.zeros_like(x))
    assert np.all(out.coeffs == 0)


def _composite_face_integral(mesh, faces, fn, depth=5):
    """Integrate fn(points) over faces by splitting each into 4**depth triangles."""
    bary, w = face_rule()
    tris = [np.eye(3)]
    for _ in range(depth):
        new = []
        for t in tris:
            m01, m12, m20 = (t[0] + t[1]) / 2, (t[1] + t[2]) / 2, (t[2] + t[0]) / 2
            new += [np.array([t[0], m01, m20]), np.array([t[1], m12, m01]),
                    np.array([t[2], m20, m12]), np.array([m01, m12, m20])]
        tris = new
    sub = np.array(tris)  # (S, 3, 3) barycentric corners
    b = np.einsum("qk,skl->sql", bary, sub).reshape(-1, 3)
    wt = np.tile(w, len(sub)) / len(sub)
    pts = np.einsum("pk,fkd->fpd", b, mesh.corners[faces])
    vals = fn(faces, pts.reshape(-1, 3)).reshape(len(faces), -1)
    return mesh.face_areas[faces] * (vals @ wt)


@pytest.mark.parametrize("c", [1.0, 1.25])
def test_commuting_diagram(c):
    """div of the interpolant equals the face mean of div q for Piola fields."""
    s = SurfaceGeometry(c)
    mesh = icosphere(s, 2)
    dm = DofMap.build(mesh)
    basis = FaceBasis(mesh, dm)
    ex = exact_fields(s, n_quad=16)

    def qbar(faces, pts):
        ev = closest_point(s, pts)
        return piola_pullback(s, ev, mesh.face_normals[faces], ex.u(ev.point_on_gamma))

    def div_qbar(faces, pts):
        # Piola divergence identity
        ev = closest_point(s, pts)
        fids = np.repeat(faces, len(pts) // len(faces))
        return area_ratio(s, ev, mesh.face_normals[fids]) * ex.g(ev.point_on_gamma)

    U = interpolate_bdm(mesh, dm, qbar, n_gauss=10)
    faces = np.arange(0, mesh.n_faces, 5)
    mean_div = _composite_face_integral(mesh, faces, div_qbar) / mesh.face_areas[faces]
    assert np.abs(U.divergence(basis)[faces] - mean_div).max() <= 1e-10


def test_project_pressure():
    mesh = icosphere(SurfaceGeometry(1.0), 1)
    dm = DofMap.build(mesh)
    assert np.allclose(project_pressure(mesh, dm, lambda x: np.ones(len(x))).coeffs, 1.0)
    cen = mesh.centroids
    f_of = lambda x: np.argmin(((x[:, None, :] - cen[None]) ** 2).sum(-1), axis=1)
    zero_mean = lambda x: (x - cen[f_of(x)]) @ np.array([1.0, -2.0, 0.5])
    assert np.abs(project_pressure(mesh, dm, zero_mean).coeffs).max() < 1e-14
    a = np.array([0.3, 0.1, -0.7])
    lin = project_pressure(mesh, dm, lambda x: x @ a + 2.0)
    assert np.allclose(lin.coeffs, cen @ a + 2.0, atol=1e-14)


def test_fe_function_length_check():
    mesh = icosphere(SurfaceGeometry(1.0), 0)
    dm = DofMap.build(mesh)
    with pytest.raises(ValueError):
        FeFunction(np.zeros(5), dm, mesh)
