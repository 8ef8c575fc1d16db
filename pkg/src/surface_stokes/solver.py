"""Saddle-point solves and the constrained Stokes eigenproblem."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import FeSystem
from .fem import FeFunction

log = logging.getLogger(__name__)


class SingularSystemError(RuntimeError):
    pass


class EigenConvergenceError(RuntimeError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


class IllConditionedWarning(RuntimeWarning):
    pass


class SaddleFactorization:
    """Factorized solver for the perturbed saddle system.

    Solves [[K, B^T, 0], [B, 0, a], [0, a^T, 0]] (U, -P, lam) = (F, G, 0)
    with K = A + J + eps*Mv and ``a`` the face areas, so ``P`` has zero mean
    and ``lam`` absorbs the part of G incompatible with a closed surface.

    Only the SPD block K + gamma B^T D^-1 B (D = diag of face areas) is
    factorized. Each correction step solves the regularized system
    [[K, B^T], [B, -D/gamma]] exactly; iterating on the residual of the
    true saddle system converges to its solution at rate ~1/gamma.
    """

    def __init__(self, system: FeSystem, epsilon: float, gamma: float = 100.0,
                 max_refine: int = 30, tol: float = 1e-13, pivot_tolerance: float = 0.0):
        if epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if epsilon == 0 and system.killing.dim > 0:
            # the Killing fields span the kernel of the continuous operator
            raise SingularSystemError("eps = 0 is singular on a surface with Killing fields; use eps > 0")
        self.system = system
        self.epsilon = float(epsilon)
        self.nv, self.np = system.dofmap.n_velocity, system.dofmap.n_pressure
        self.max_refine = max_refine
        self.tol = tol
        self.K = (system.A + system.J + self.epsilon * system.Mv).tocsr()
        self.B = system.B.tocsr()
        self.BT = self.B.T.tocsr()
        self.area = np.asarray(system.pressure_weights, float)
        self.Dinv = 1.0 / self.area
        BDB = (self.BT @ sp.diags(self.Dinv) @ self.B).tocsr()
        # scale-free penalty: gamma relative to the diagonal sizes
        self.gamma = gamma * self.K.diagonal().mean() / BDB.diagonal().mean()
        Kg = (self.K + self.gamma * BDB).tocsc()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", sla.LinAlgWarning)
                self.lu = spla.splu(Kg, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=pivot_tolerance,
                                    options={"SymmetricMode": True})
        except (RuntimeError, sla.LinAlgWarning) as exc:
            raise SingularSystemError(f"factorization failed: {exc}") from exc
        diag = self.lu.U.diagonal()
        if diag.min() <= 1e-13 * np.abs(diag).max():
            raise SingularSystemError(
                "saddle-point matrix is numerically singular (eps = 0 with Killing fields present?)"
            )
        self.last_iterations = 0

    def residual(self, U, P, F, Gc):
        r1 = F - self.K @ U + self.BT @ P
        r2 = Gc - self.B @ U
        return r1, r2

    def solve_blocks(self, F, G):
        """Solve for (U, P, lam, rel_residual) given velocity/pressure data."""
        F = np.asarray(F, float)
        G = np.asarray(G, float)
        multi = F.ndim == 2
        if not multi:
            F, G = F[:, None], G[:, None]
        lam = G.sum(axis=0) / self.area.sum()
        Gc = G - self.area[:, None] * lam[None, :]
        U = np.zeros_like(F)
        P = np.zeros_like(Gc)
        nrm = np.maximum(np.sqrt((F * F).sum(0) + (G * G).sum(0)), 1e-300)
        # stop on the size of the corrections: weakly inf-sup stable
        # pressure modes barely show in the residual
        prev = np.inf
        it = 0
        for it in range(1, self.max_refine + 1):
            r1, r2 = self.residual(U, P, F, Gc)
            du = self.lu.solve(r1 + self.gamma * (self.BT @ (self.Dinv[:, None] * r2)))
            # P enters with a minus sign: K U - B^T P = F
            dP = -self.gamma * self.Dinv[:, None] * (self.B @ du - r2)
            U += du
            P += dP
            corr = max(_rel(du, U), _rel(dP, P))
            if corr < self.tol or corr > 0.5 * prev:
                break
            prev = corr
        r1, r2 = self.residual(U, P, F, Gc)
        res = np.sqrt((r1 * r1).sum(0) + (r2 * r2).sum(0)) / nrm
        self.last_iterations = it
        if not multi:
            return U[:, 0], P[:, 0], float(lam[0]), float(res[0])
        return U, P, lam, res


def _rel(d, x):
    return float((np.abs(d).max(0) / np.maximum(np.abs(x).max(0), 1e-300)).max())


@dataclass
class StokesSolution:
    U: FeFunction
    P: FeFunction
    epsilon: float
    residual_norm: float
    divergence_residual: float
    ill_conditioned: bool = False
    multiplier: float = 0.0  # mean of g absorbed by the area row


def solve_stokes(
    system: FeSystem,
    epsilon: float,
    f_vec: Optional[np.ndarray] = None,
    g_vec: Optional[np.ndarray] = None,
    factorization: Optional[SaddleFactorization] = None,
) -> StokesSolution:
    """Perturbed Stokes solve; ``f_vec``/``g_vec`` default to the assembled loads."""
    fac = factorization or SaddleFactorization(system, epsilon)
    if fac.epsilon != epsilon:
        raise ValueError("factorization was built for a different epsilon")
    F = system.f_vec if f_vec is None else f_vec
    G = system.g_vec if g_vec is None else g_vec
    U, P, lam, res = fac.solve_blocks(F, G)
    a = system.pressure_weights
    G_compat = G - a * lam
    div_res = float(np.linalg.norm(system.B @ U - G_compat) / max(np.linalg.norm(G_compat), 1.0))
    bad = res > 1e-8
    if bad:
        warnings.warn(f"saddle solve residual {res:.2e} exceeds 1e-8", IllConditionedWarning)
    d, m = system.dofmap, system.mesh
    return StokesSolution(
        U=FeFunction(U, d, m),
        P=FeFunction(P, d, m, kind="pressure"),
        epsilon=epsilon,
        residual_norm=res,
        divergence_residual=div_res,
        ill_conditioned=bad,
        multiplier=lam,
    )


@dataclass
class EigenSet:
    """Lowest eigenpairs of a(U,V)+j(U,V) = Lambda (U,V) on {BU = 0}."""

    values: np.ndarray  # Lambda_i ascending, shift already removed
    vectors: np.ndarray  # (n_velocity, k), Mv-orthonormal
    residuals: np.ndarray
    iterations: int
    dofmap: object = None
    mesh: object = None

    def __len__(self):
        return len(self.values)

    def function(self, i: int) -> FeFunction:
        return FeFunction(self.vectors[:, i], self.dofmap, self.mesh)


def solve_eigen(
    system: FeSystem,
    k: int = 3,
    *,
    block: Optional[int] = None,
    tol: float = 1e-10,
    residual_tol: float = 1e-7,
    max_iter: int = 200,
    seed: int = 0,
    factorization: Optional[SaddleFactorization] = None,
) -> EigenSet:
    """Blocked shift-invert iteration with Rayleigh-Ritz on {BU = 0}.

    The shift is the epsilon of ``factorization`` (1 by default, i.e. the
    stabilised pencil (A + J + Mv, Mv)); Ritz values theta of the shifted
    pencil give Lambda = theta - shift. Passing the factorization used for a
    Stokes solve at eps = h^2 reuses it and converges faster.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    nv, npr = system.dofmap.n_velocity, system.dofmap.n_pressure
    # BU = 0 has codimension npr - 1 (B^T 1 = 0 on a closed surface)
    free_dim = nv - npr + 1
    if k > free_dim:
        raise ValueError(f"k={k} exceeds the constrained subspace dimension {free_dim}")
    p = min(block or k + 5, free_dim)
    fac = factorization or SaddleFactorization(system, 1.0)
    shift = fac.epsilon
    Mv = system.Mv
    K = fac.K
    zeros = np.zeros((npr, p))
    rng = np.random.default_rng(seed)
    X, _, _, _ = fac.solve_blocks(Mv @ rng.standard_normal((nv, p)), zeros)
    prev = None
    res = np.full(k, np.inf)
    for it in range(1, max_iter + 1):
        Y, _, _, _ = fac.solve_blocks(Mv @ X, zeros)
        # Killing columns grow like 1/theta per step; rescale the basis
        Y, _ = np.linalg.qr(Y)
        Kr = Y.T @ (K @ Y)
        Mr = Y.T @ (Mv @ Y)
        theta, C = sla.eigh(0.5 * (Kr + Kr.T), 0.5 * (Mr + Mr.T))
        X = Y @ C
        ritz = theta[:k]
        if prev is not None:
            change = np.abs(ritz - prev) / np.maximum(np.abs(ritz), 1e-300)
            if np.all(change < tol):
                res = _constrained_residual(fac, X[:, :k], ritz - shift)
                if np.all(res <= residual_tol * (np.abs(ritz - shift) + 1.0)):
                    break
        prev = ritz
    else:
        raise EigenConvergenceError(f"no convergence after {max_iter} iterations", residuals=res)
    vecs = X[:, :k]
    G = vecs.T @ (Mv @ vecs)
    L = np.linalg.cholesky(0.5 * (G + G.T))
    vecs = _fix_signs(sla.solve_triangular(L, vecs.T, lower=True).T)
    return EigenSet(ritz - shift, vecs, res, it, system.dofmap, system.mesh)


def _constrained_residual(fac: SaddleFactorization, X, lam):
    """Relative pencil residual after removing its range(B^T) component.

    R = (A+J)X - lam Mv X minus its Euclidean projection onto range(B^T),
    divided by ||Mv X||; zero exactly when X is a constrained eigenvector.
    """
    s = fac.system
    R = (s.A + s.J) @ X - (s.Mv @ X) * lam[None, :]
    R = R - fac.BT @ _bbt_solve(fac, fac.B @ R)
    scale = np.linalg.norm(s.Mv @ X, axis=0)
    return np.linalg.norm(R, axis=0) / np.maximum(scale, 1e-300)


def _bbt_solve(fac: SaddleFactorization, rhs):
    # B B^T has the constants as kernel; pin the first pressure dof
    if getattr(fac, "_bbt_lu", None) is None:
        BBt = (fac.B @ fac.BT).tocsc()[1:, 1:]
        fac._bbt_lu = spla.splu(BBt.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                 options={"SymmetricMode": True})
    out = np.zeros_like(rhs)
    out[1:] = fac._bbt_lu.solve(np.ascontiguousarray(rhs[1:]))
    return out


def _fix_signs(vecs):
    # deterministic sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(vecs), axis=0)
    s = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    s[s == 0] = 1.0
    return vecs * s


@dataclass
class KillingProjection:
    projected: FeFunction  # P_K U as a combination of Killing interpolants
    remainder: FeFunction  # U - P_K U
    coefficients: np.ndarray
    norm: float  # ||P_K U||_L2 from the analytic Gram matrix


def project_analytic_killing(system: FeSystem, U: FeFunction) -> KillingProjection:
    """L2 projection onto the analytic Killing fields."""
    if system.killing.dim == 0:
        raise ValueError("no Killing fields on this surface")
    G = system.killing_gram_exact()
    if np.linalg.cond(G) > 1e12:
        raise np.linalg.LinAlgError("singular Killing Gram matrix")
    kint = system.killing_interpolants()
    # Gram of the interpolants against the lifted fields: makes the map an
    # exact projection on coefficient vectors; the norm uses the analytic G
    Gh = system.k_gram @ np.column_stack([kj.coeffs for kj in kint])
    c = np.linalg.solve(Gh, system.k_gram @ U.coeffs)
    pk = sum(cj * kj.coeffs for cj, kj in zip(c, kint))
    d, m = system.dofmap, system.mesh
    return KillingProjection(
        FeFunction(pk, d, m), FeFunction(U.coeffs - pk, d, m), c, float(np.sqrt(c @ G @ c))
    )


def project_discrete_killing(system: FeSystem, eigs: EigenSet, indices: Sequence[int], U: FeFunction) -> FeFunction:
    """Remove the Mv-orthogonal components along eigenvectors ``indices`` (1-based)."""
    out = U.coeffs.copy()
    MU = system.Mv @ U.coeffs
    for i in indices:
        if not 1 <= i <= len(eigs):
            raise IndexError(f"eigen index {i} out of range 1..{len(eigs)}")
        v = eigs.vectors[:, i - 1]
        out -= (v @ MU) * v
    return FeFunction(out, U.dofmap, U.mesh)


@dataclass
class SolverConfig:
    rho: float = 10.0
    epsilon_policy: tuple = ("h_power", 2.0)
    eigen_count: int = 3
    pivot_tolerance: float = 0.0  # the factorized block is SPD; diagonal pivots suffice

    def __post_init__(self):
        kind, val = self.epsilon_policy
        if kind == "h_power" and not 0 < val <= 2:
            raise ValueError("alpha must lie in (0, 2]")
        if kind not in ("h_power", "fixed"):
            raise ValueError(f"unknown epsilon policy {kind!r}")
        if not 1 <= self.eigen_count <= 10:
            raise ValueError("eigen_count must be in 1..10")

    def epsilon(self, h: float) -> float:
        kind, val = self.epsilon_policy
        return h**val if kind == "h_power" else float(val)

    def factorization(self, system: FeSystem) -> SaddleFactorization:
        if system.rho != self.rho:
            raise ValueError("system was assembled with a different rho")
        return SaddleFactorization(system, self.epsilon(system.h), pivot_tolerance=self.pivot_tolerance)
