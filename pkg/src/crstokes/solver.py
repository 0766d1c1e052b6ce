"""Saddle-point solver for the discrete Stokes system.

Dirichlet dofs are eliminated.  Two paths are offered: a sparse direct
factorisation of the full KKT matrix with one pressure dof pinned, and a
preconditioned conjugate gradient on the pressure Schur complement that reuses
a single factorisation of the scalar CR stiffness for all three velocity
components.  Both shift the pressure to zero mean afterwards.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

try:  # supernodal Cholesky, far faster than SuperLU on 3D stiffness matrices
    from cvxopt import cholmod as _cholmod
    from cvxopt import matrix as _cvx_matrix
    from cvxopt import spmatrix as _cvx_spmatrix
except ImportError:  # pragma: no cover
    _cholmod = None

from .fem import DofMap, assemble_b, assemble_stiffness
from .mesh import TetMesh

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    def __init__(self, message: str, best_residual: float):
        super().__init__(f"{message} (best residual {best_residual:.3e})")
        self.best_residual = best_residual


class SPDFactor:
    """Sparse Cholesky (CHOLMOD via cvxopt) with a SuperLU fallback."""

    def __init__(self, K: sp.spmatrix, backend: str = "auto"):
        if backend == "auto":
            backend = "cholmod" if _cholmod is not None else "splu"
        self.backend = backend
        if backend == "cholmod":
            C = sp.coo_matrix(K)
            A = _cvx_spmatrix(C.data, C.row.astype(int).tolist(), C.col.astype(int).tolist(), C.shape)
            _cholmod.options["supernodal"] = 2
            self._f = _cholmod.symbolic(A)
            _cholmod.numeric(A, self._f)
        elif backend == "splu":
            self._f = spla.splu(sp.csc_matrix(K), permc_spec="COLAMD")
        else:
            raise ValueError(f"unknown factorisation backend {backend!r}")

    def solve(self, Y: np.ndarray) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if self.backend == "splu":
            return self._f.solve(np.asfortranarray(Y))
        X = _cvx_matrix(np.array(Y.reshape(Y.shape[0], -1), order="F"))
        _cholmod.solve(self._f, X)
        return np.array(X).reshape(Y.shape)


@dataclass
class StokesSystem:
    """Velocity block on interior dofs, divergence block and loads.

    ``A = nu * kron(K, I_3)`` with ``K`` the scalar stiffness restricted to
    interior facets.
    """

    K: sp.csr_matrix
    nu: float
    B: sp.csr_matrix
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    dofmap: DofMap
    volumes: np.ndarray
    boundary_values: np.ndarray  # (nf, 3)
    _lu: object = field(default=None, repr=False)

    @property
    def A(self) -> sp.csr_matrix:
        return (self.nu * sp.kron(self.K, sp.identity(3), format="csr")).tocsr()

    def factor(self):
        if self._lu is None:
            self._lu = SPDFactor(self.K)
        return self._lu

    def solve_a(self, y: np.ndarray) -> np.ndarray:
        Y = np.asarray(y).reshape(-1, 3)
        return (self.factor().solve(Y) / self.nu).reshape(-1)

    def apply_a(self, u: np.ndarray) -> np.ndarray:
        return (self.nu * (self.K @ u.reshape(-1, 3))).reshape(-1)

    def with_load(self, rhs_u: np.ndarray, rhs_p: np.ndarray | None = None, nu: float | None = None) -> "StokesSystem":
        """Same matrices (and factorisation), different right-hand side or viscosity."""
        return StokesSystem(self.K, self.nu if nu is None else nu, self.B, rhs_u,
                            self.rhs_p if rhs_p is None else rhs_p, self.dofmap, self.volumes,
                            self.boundary_values, self._lu)


def build_system(mesh: TetMesh, nu: float, rhs_full: np.ndarray, boundary_values: np.ndarray | None = None,
                 stiffness: sp.spmatrix | None = None, B_full: sp.spmatrix | None = None) -> StokesSystem:
    """Eliminate Dirichlet dofs from the full system.

    ``rhs_full`` is the load over all velocity dofs; ``boundary_values`` are
    the (nf, 3) facet values imposed on boundary facets.
    """
    dm = DofMap.from_mesh(mesh)
    K = assemble_stiffness(mesh) if stiffness is None else stiffness
    B = assemble_b(mesh) if B_full is None else B_full
    fi, fb = dm.interior_facets, dm.boundary_facets
    g = np.zeros((mesh.n_facets, 3)) if boundary_values is None else np.asarray(boundary_values)
    gb = g[fb]
    K_ii = K[fi][:, fi].tocsr()
    K_ib = K[fi][:, fb].tocsr()
    rhs_u = rhs_full[dm.interior_dofs] - nu * (K_ib @ gb).reshape(-1)
    B_i = B[:, dm.interior_dofs].tocsr()
    rhs_p = -(B[:, dm.boundary_dofs] @ gb.reshape(-1))
    return StokesSystem(K_ii, nu, B_i, rhs_u, rhs_p, dm, mesh.volumes.copy(), g)


@dataclass
class SolveReport:
    method: str
    iterations: int
    residual_u: float
    residual_p: float
    converged: bool

    @property
    def residual(self) -> float:
        return max(self.residual_u, self.residual_p)


def _residuals(system: StokesSystem, u: np.ndarray, p: np.ndarray) -> tuple[float, float]:
    Bt_p = system.B.T @ p
    ru = system.apply_a(u) + Bt_p - system.rhs_u
    scale_u = np.linalg.norm(np.abs(system.apply_a(u))) + np.linalg.norm(Bt_p) + np.linalg.norm(system.rhs_u)
    rp = system.B @ u - system.rhs_p
    scale_p = np.linalg.norm(abs(system.B) @ np.abs(u)) + np.linalg.norm(system.rhs_p)
    res_u = float(np.linalg.norm(ru) / scale_u) if scale_u > 0 else float(np.linalg.norm(ru))
    res_p = float(np.linalg.norm(rp) / scale_p) if scale_p > 0 else float(np.linalg.norm(rp))
    return res_u, res_p


def _zero_mean(p: np.ndarray, volumes: np.ndarray) -> np.ndarray:
    return p - np.dot(volumes, p) / volumes.sum()


def solve_schur_cg(system: StokesSystem, tol: float = 1e-10, max_iter: int = 500):
    """PCG on ``B A^-1 B^T p = B A^-1 f - g`` with the scaled P0 mass as preconditioner."""
    vol = system.volumes
    minv = system.nu / vol
    u = system.solve_a(system.rhs_u)
    p = np.zeros(len(vol))
    r = system.B @ u - system.rhs_p
    r -= r.mean()
    z = minv * r
    d = z.copy()
    rz = float(r @ z)
    absB = abs(system.B)
    if not np.any(r):
        return u, p, 0
    best = np.inf
    for it in range(1, max_iter + 1):
        w = system.solve_a(system.B.T @ d)
        Sd = system.B @ w
        alpha = rz / float(d @ Sd)
        p += alpha * d
        u -= alpha * w
        r -= alpha * Sd
        r -= r.mean()
        scale = np.linalg.norm(absB @ np.abs(u)) + np.linalg.norm(system.rhs_p)
        rel = np.linalg.norm(r) / scale if scale > 0 else np.linalg.norm(r)
        best = min(best, rel)
        if rel <= 0.1 * tol:
            return u, p, it
        z = minv * r
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise SolverError(f"Schur CG did not converge in {max_iter} iterations", best)


def solve_direct(system: StokesSystem):
    A = system.A
    B = system.B.tocsc()[1:, :].tocsr()  # pin the first pressure dof
    K = sp.bmat([[A, B.T], [B, None]], format="csc")
    rhs = np.concatenate([system.rhs_u, system.rhs_p[1:]])
    x = spla.splu(K, permc_spec="MMD_AT_PLUS_A").solve(rhs)
    n = len(system.rhs_u)
    return x[:n], np.concatenate([[0.0], x[n:]]), 1


def solve(system: StokesSystem, tol: float = 1e-10, max_iter: int = 500, method: str = "auto"):
    """Solve for ``(u_h, p_h)`` on all dofs; returns ``(u, p, SolveReport)``.

    ``u`` is the full (n_u,) velocity vector including the boundary values,
    ``p`` has zero volume-weighted mean.
    """
    if not 0.0 < tol <= 1e-6:
        raise ValueError("tol must lie in (0, 1e-6]")
    if method == "auto":
        method = "direct" if len(system.rhs_u) < 3_000 else "schur"
    if method == "direct":
        ui, p, it = solve_direct(system)
    elif method == "schur":
        ui, p, it = solve_schur_cg(system, tol, max_iter)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    p = _zero_mean(p, system.volumes)
    res_u, res_p = _residuals(system, ui, p)
    report = SolveReport(method, it, res_u, res_p, max(res_u, res_p) <= tol)
    if not report.converged:
        raise SolverError(f"{method} solve missed the residual target {tol:.1e}", report.residual)
    log.debug("solve %s: %d iterations, residuals %.2e / %.2e", method, it, res_u, res_p)
    dm = system.dofmap
    u = np.zeros(dm.n_u)
    u[dm.interior_dofs] = ui
    u[dm.boundary_dofs] = system.boundary_values[dm.boundary_facets].reshape(-1)
    return u, p, report


def dump_system(system: StokesSystem, prefix: str | Path) -> list[Path]:
    """Matrix Market dump of A, B and both loads."""
    prefix = Path(prefix)
    paths = []
    for name, obj in (("A", system.A), ("B", system.B),
                      ("rhs_u", system.rhs_u[:, None]), ("rhs_p", system.rhs_p[:, None])):
        path = prefix.with_name(f"{prefix.name}_{name}.mtx")
        scipy.io.mmwrite(str(path), sp.coo_matrix(obj) if name in ("A", "B") else obj)
        paths.append(path)
    return paths
