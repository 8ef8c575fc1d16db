"""Analytic ellipsoid x^2 + y^2 + z^2/c^2 = 1 and pointwise geometry.

Everything here is vectorised over a leading point axis: query arrays have
shape ``(N, 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import dual
from .dual import sqrt


class GeometryError(RuntimeError):
    pass


class TransversalityError(GeometryError):
    """nu . nu_Gamma <= 0 somewhere on the discrete surface."""


@dataclass(frozen=True)
class SurfaceGeometry:
    c: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")

    @property
    def is_sphere(self) -> bool:
        return self.c == 1.0

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 0] ** 2 + x[..., 1] ** 2 + x[..., 2] ** 2 / self.c**2 - 1.0

    def grad_phi(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * x * np.array([1.0, 1.0, 1.0 / self.c**2])

    def normal_ext(self, X) -> List:
        """Unit level-set normal at coordinates ``X`` (list, duals allowed).

        Agrees with the distance normal on the surface; used as a smooth
        extension for tangential derivatives.
        """
        a = 1.0 / self.c**2
        g = [X[0], X[1], a * X[2]]
        inv = 1.0 / sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2])
        return [gi * inv for gi in g]


@dataclass
class GeometryEval:
    point_on_gamma: np.ndarray  # (N, 3)
    d: np.ndarray  # (N,)
    nu: np.ndarray  # (N, 3)
    Pi: np.ndarray  # (N, 3, 3)
    H: np.ndarray  # (N, 3, 3) Hess d at the query point
    kappa: np.ndarray  # (N, 2) principal curvatures at point_on_gamma

    def __len__(self):
        return len(self.d)


def _tangent_frame(nu):
    # any vector not parallel to nu
    helper = np.where(np.abs(nu[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t1 = np.cross(nu, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(nu, t1)
    return t1, t2


def closest_point(surface: SurfaceGeometry, x, tol: float = 1e-12, max_iter: int = 50) -> GeometryEval:
    """Closest point projection and derived quantities at points ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = 1.0 / surface.c**2
    if surface.is_sphere:
        r = np.linalg.norm(x, axis=1)
        if np.any(r == 0):
            raise GeometryError("closest point undefined at the origin")
        y = x / r[:, None]
    else:
        rho2 = x[:, 0] ** 2 + x[:, 1] ** 2
        z2 = x[:, 2] ** 2
        t = np.sqrt(np.maximum(surface.phi(x) + 1.0, 1e-300)) - 1.0
        # Newton on the Lagrange multiplier equation
        for _ in range(max_iter):
            p = 1.0 + t
            q = 1.0 + a * t
            F = rho2 / p**2 + a * z2 / q**2 - 1.0
            dF = -2.0 * rho2 / p**3 - 2.0 * a * a * z2 / q**3
            step = F / dF
            t = t - step
            if np.all(np.abs(step) <= tol * (1.0 + np.abs(t))):
                break
        else:
            raise GeometryError("closest point Newton iteration did not converge; point outside admissible neighbourhood")
        y = np.stack([x[:, 0] / (1.0 + t), x[:, 1] / (1.0 + t), x[:, 2] / (1.0 + a * t)], axis=1)
        # one polish step back onto the level set
        y = _polish(surface, y)
    g = surface.grad_phi(y)
    gn = np.linalg.norm(g, axis=1)
    nu = g / gn[:, None]
    d = np.einsum("ij,ij->i", x - y, nu)
    eye = np.eye(3)
    Pi = eye - nu[:, :, None] * nu[:, None, :]
    hess_phi = np.diag([2.0, 2.0, 2.0 * a])
    Hs = np.einsum("nij,jk,nkl->nil", Pi, hess_phi, Pi) / gn[:, None, None]
    # Hess d off the surface; outward-positive d
    H = Hs @ np.linalg.inv(eye + d[:, None, None] * Hs)
    t1, t2 = _tangent_frame(nu)
    frame = np.stack([t1, t2], axis=2)  # (N, 3, 2)
    small = np.einsum("nia,nij,njb->nab", frame, Hs, frame)
    kappa = np.linalg.eigvalsh(small)
    return GeometryEval(point_on_gamma=y, d=d, nu=nu, Pi=Pi, H=H, kappa=kappa)


def _polish(surface, y):
    # radial correction of size O(phi); keeps |phi| at round-off level
    f = surface.phi(y)
    g = surface.grad_phi(y)
    return y - (f / np.einsum("ij,ij->i", g, g))[:, None] * g


def area_ratio(surface: SurfaceGeometry, ev: GeometryEval, nu_gamma_face) -> np.ndarray:
    """Ratio mu of surface measures, d(gamma) = mu d(Gamma)."""
    nu_face = np.broadcast_to(np.asarray(nu_gamma_face, dtype=float), ev.nu.shape)
    cos = np.einsum("ij,ij->i", ev.nu, nu_face)
    if np.any(cos <= 0):
        raise TransversalityError("nu . nu_Gamma <= 0")
    # eigenvalues of H at the query point are kappa / (1 + d kappa)
    k_here = ev.kappa / (1.0 + ev.d[:, None] * ev.kappa)
    return cos * np.prod(1.0 - ev.d[:, None] * k_here, axis=1)


def piola_lift(surface, ev: GeometryEval, nu_gamma_face, q_bar) -> np.ndarray:
    """Map face-tangent vectors at points of Gamma to tangent vectors of gamma."""
    mu = area_ratio(surface, ev, nu_gamma_face)
    L = ev.Pi - ev.d[:, None, None] * ev.H
    return np.einsum("nij,nj->ni", L, q_bar) / mu[:, None]


def piola_pullback(surface, ev: GeometryEval, nu_gamma_face, q) -> np.ndarray:
    """Inverse of :func:`piola_lift`."""
    nu_face = np.broadcast_to(np.asarray(nu_gamma_face, dtype=float), ev.nu.shape)
    mu = area_ratio(surface, ev, nu_face)
    cos = np.einsum("ij,ij->i", ev.nu, nu_face)
    eye = np.eye(3)
    oblique = eye - ev.nu[:, :, None] * nu_face[:, None, :] / cos[:, None, None]
    w = np.linalg.solve(eye - ev.d[:, None, None] * ev.H, q[..., None])[..., 0]
    return mu[:, None] * np.einsum("nij,nj->ni", oblique, w)


# ---------------------------------------------------------------------------
# tangential calculus on ambient extensions
# ---------------------------------------------------------------------------

Field = Callable[[List], List]


def _projector(surface, X):
    n = surface.normal_ext(X)
    return [[(1.0 if i == j else 0.0) - n[i] * n[j] for j in range(3)] for i in range(3)]


def _matmul(A, B):
    return [[sum(A[i][k] * B[k][j] for k in range(3)) for j in range(3)] for i in range(3)]


def _deformation_lists(surface, field, X):
    G = dual.jacobian(field, X)
    P = _projector(surface, X)
    T = _matmul(_matmul(P, G), P)
    return [[0.5 * (T[i][j] + T[j][i]) for j in range(3)] for i in range(3)]


def _to_array(rows, n):
    return np.stack([np.stack([np.broadcast_to(np.asarray(dual.value(e), float), (n,)) for e in r], -1) for r in rows], -2)


def _coords(points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return points, [points[:, k] for k in range(3)]


def tangential_gradient(surface, field: Field, points) -> np.ndarray:
    """Pi (grad f) Pi for an ambient extension ``field`` at points on gamma."""
    points, X = _coords(points)
    G = dual.jacobian(field, X)
    P = _projector(surface, X)
    return _to_array(_matmul(_matmul(P, G), P), len(points))


def deformation(surface, field: Field, points) -> np.ndarray:
    points, X = _coords(points)
    return _to_array(_deformation_lists(surface, field, X), len(points))


def surface_divergence(surface, field: Field, points) -> np.ndarray:
    return np.trace(tangential_gradient(surface, field, points), axis1=1, axis2=2)


def scalar_surface_gradient(surface, scalar, points) -> np.ndarray:
    points, X = _coords(points)
    g = dual.gradient(scalar, X)
    P = _projector(surface, X)
    out = [sum(P[i][k] * g[k] for k in range(3)) for i in range(3)]
    return np.stack([np.broadcast_to(np.asarray(o, float), (len(points),)) for o in out], -1)


def projected_div_def(surface, field: Field, points) -> np.ndarray:
    """Pi div_gamma Def_gamma f, via nested forward differentiation."""
    points, X = _coords(points)

    def def_rows(Y):
        D = _deformation_lists(surface, field, Y)
        # flatten so the jacobian helper sees a "vector field" with 9 entries
        return [D[i][j] for i in range(3) for j in range(3)]

    outer = dual.seed(X)
    D = def_rows(outer)
    P = _projector(surface, X)
    # div of row i: sum_{j,k} d_k D_ij Pi_kj
    div = []
    for i in range(3):
        s = 0.0
        for j in range(3):
            e = D[3 * i + j]
            for k in range(3):
                s = s + dual._der(e, k) * P[k][j]
        div.append(s)
    out = [sum(P[i][k] * div[k] for k in range(3)) for i in range(3)]
    return np.stack([np.broadcast_to(np.asarray(o, float), (len(points),)) for o in out], -1)


# ---------------------------------------------------------------------------
# manufactured solution and Killing fields
# ---------------------------------------------------------------------------


def _base_velocity(X):
    x, y, z = X
    return [-(z * z), x, y]


def _pressure(X):
    x, y, z = X
    return x * y * y * y + z


@dataclass
class ExactSolution:
    """Manufactured velocity/pressure pair with matching data f and g.

    All callables take points on gamma of shape (N, 3).
    """

    surface: SurfaceGeometry
    p_mean: float = 0.0

    def velocity_ext(self, X):
        P = _projector(self.surface, X)
        b = _base_velocity(X)
        return [sum(P[i][k] * b[k] for k in range(3)) for i in range(3)]

    def u(self, pts):
        pts = np.atleast_2d(pts)
        X = [pts[:, k] for k in range(3)]
        return np.stack(self.velocity_ext(X), -1)

    def p(self, pts):
        pts = np.atleast_2d(pts)
        return _pressure([pts[:, k] for k in range(3)]) - self.p_mean

    def grad_u(self, pts):
        return tangential_gradient(self.surface, self.velocity_ext, pts)

    def f(self, pts):
        div_def = projected_div_def(self.surface, self.velocity_ext, pts)
        grad_p = scalar_surface_gradient(self.surface, _pressure, pts)
        return -2.0 * div_def + grad_p

    def g(self, pts):
        return surface_divergence(self.surface, self.velocity_ext, pts)


def exact_fields(surface: SurfaceGeometry, n_quad: int = 64) -> ExactSolution:
    pts, w = surface_quadrature(surface, n_quad)
    sol = ExactSolution(surface)
    sol.p_mean = float(w @ sol.p(pts) / w.sum())
    return sol


def _k1(X):
    x, y, z = X
    return [y, -x, 0.0 * x]


def _k2(X):
    x, y, z = X
    return [z, 0.0 * x, -x]


def _k3(X):
    x, y, z = X
    return [0.0 * x, z, -y]


@dataclass
class KillingBasis:
    fields: list

    @property
    def dim(self) -> int:
        return len(self.fields)

    def evaluate(self, pts) -> np.ndarray:
        """Values of all basis fields, shape (dim, N, 3)."""
        pts = np.atleast_2d(pts)
        X = [pts[:, k] for k in range(3)]
        if not self.fields:
            return np.zeros((0, len(pts), 3))
        return np.stack([np.stack([np.broadcast_to(c, (len(pts),)) for c in k(X)], -1) for k in self.fields])


def killing_basis(surface: SurfaceGeometry) -> KillingBasis:
    if surface.is_sphere:
        return KillingBasis([_k1, _k2, _k3])
    return KillingBasis([_k1])


def surface_quadrature(surface: SurfaceGeometry, n: int = 64):
    """Tensor quadrature on gamma: Gauss-Legendre in theta, trapezoid in phi."""
    xg, wg = np.polynomial.legendre.leggauss(n)
    theta = 0.5 * np.pi * (xg + 1.0)
    wt = 0.5 * np.pi * wg
    m = 2 * n
    ph = 2.0 * np.pi * np.arange(m) / m
    wp = np.full(m, 2.0 * np.pi / m)
    T, F = np.meshgrid(theta, ph, indexing="ij")
    c = surface.c
    st, ct, sp, cp = np.sin(T), np.cos(T), np.sin(F), np.cos(F)
    pts = np.stack([st * cp, st * sp, c * ct], -1).reshape(-1, 3)
    r_t = np.stack([ct * cp, ct * sp, -c * st], -1)
    r_p = np.stack([-st * sp, st * cp, np.zeros_like(st)], -1)
    jac = np.linalg.norm(np.cross(r_t, r_p), axis=-1)
    w = (wt[:, None] * wp[None, :] * jac).reshape(-1)
    return pts, w
