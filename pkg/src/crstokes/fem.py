"""Crouzeix-Raviart / P0 spaces and assembly of the discrete Stokes forms.

Velocity dofs are facet-barycenter values, index ``3 * facet + component``;
pressure dofs are one constant per tetrahedron.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import TetMesh
from .quadrature import QuadratureConfig, TetQuadrature, facet_points
from .reconstruction import broken_gradient, reconstruction_matrix

METHODS = ("cr", "cr-rt", "cr-bdm")


@dataclass
class DofMap:
    n_facets: int
    n_tets: int
    boundary_facets: np.ndarray
    interior_facets: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: TetMesh) -> "DofMap":
        bnd = mesh.is_boundary_facet
        return cls(mesh.n_facets, mesh.n_tets, np.flatnonzero(bnd), np.flatnonzero(~bnd))

    @property
    def n_u(self) -> int:
        return 3 * self.n_facets

    @property
    def n_p(self) -> int:
        return self.n_tets

    @staticmethod
    def vector_dofs(facets: np.ndarray) -> np.ndarray:
        return (3 * np.asarray(facets)[:, None] + np.arange(3)).ravel()

    @property
    def boundary_dofs(self) -> np.ndarray:
        return self.vector_dofs(self.boundary_facets)

    @property
    def interior_dofs(self) -> np.ndarray:
        return self.vector_dofs(self.interior_facets)


def cr_local_basis(vertices: np.ndarray):
    """CR basis on one tet: ``theta_i = 1 - 3 lambda_i``.

    Returns ``(values, gradients)``: ``values(x)`` gives (n, 4) basis values at
    points (n, 3); ``gradients`` is the constant (4, 3) array.
    """
    v = np.asarray(vertices, dtype=float)
    jac = (v[1:] - v[0]).T
    det = np.linalg.det(jac)
    scale = np.abs(jac).max() ** 3
    if abs(det) <= 1e-14 * scale:
        raise ValueError("degenerate tetrahedron")
    inv = np.linalg.inv(jac)
    gb = np.vstack([-inv.sum(axis=0), inv])

    def values(x):
        x = np.atleast_2d(x)
        lam_rest = (x - v[0]) @ inv.T
        lam = np.column_stack([1.0 - lam_rest.sum(axis=1), lam_rest])
        return 1.0 - 3.0 * lam

    return values, -3.0 * gb


def assemble_stiffness(mesh: TetMesh) -> sp.csr_matrix:
    """Scalar CR stiffness ``int grad theta_F . grad theta_G`` on facets."""
    g = mesh.grad_bary
    local = 9.0 * mesh.volumes[:, None, None] * np.einsum("tik,tjk->tij", g, g)
    f = mesh.tet_facets
    rows = np.repeat(f, 4, axis=1).ravel()
    cols = np.tile(f, (1, 4)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_facets,) * 2).tocsr()
    K.sum_duplicates()
    return K


def assemble_a(mesh: TetMesh, nu: float, stiffness: sp.spmatrix | None = None) -> sp.csr_matrix:
    """``a_h(u, v) = nu int grad_h u : grad_h v`` on all velocity dofs."""
    K = assemble_stiffness(mesh) if stiffness is None else stiffness
    return (nu * sp.kron(K, sp.identity(3), format="csr")).tocsr()


def assemble_b(mesh: TetMesh) -> sp.csr_matrix:
    """``b_h(v, q) = -int q div_h v``; row ``T`` applied to v is ``-|T| div v|_T``."""
    nt = mesh.n_tets
    vals = 3.0 * mesh.volumes[:, None, None] * mesh.grad_bary  # (nt, 4, 3)
    rows = np.repeat(np.arange(nt), 12)
    cols = (3 * mesh.tet_facets[:, :, None] + np.arange(3)).ravel()
    return sp.coo_matrix((vals.ravel(), (rows, cols)), shape=(nt, 3 * mesh.n_facets)).tocsr()


def pressure_mass(mesh: TetMesh) -> np.ndarray:
    return mesh.volumes.copy()


def p1_load(mesh: TetMesh, data, quad: QuadratureConfig | None = None, tq: TetQuadrature | None = None) -> np.ndarray:
    """``L[T, a, c] = int_T f_c lambda_a`` flattened like the nodal rows."""
    tq = tq or TetQuadrature(mesh, quad)

    def integrand(pts, sel, bary):
        f = data(pts)  # (nb, nq, 3)
        return bary[None, :, :, None] * f[:, :, None, :]

    return tq.integrate(integrand, shape=(4, 3)).reshape(-1)


def assemble_rhs(mesh: TetMesh, data, method: str = "cr", quad: QuadratureConfig | None = None,
                 tq: TetQuadrature | None = None, load: np.ndarray | None = None) -> np.ndarray:
    """``(f, v_h)`` for CR, ``(f, I_h v_h)`` for CR-RT / CR-BDM, over all velocity dofs."""
    if load is None:
        load = p1_load(mesh, data, quad, tq)
    R = reconstruction_matrix(mesh, method)
    return R.T @ load


def interpolate_cr(g, mesh: TetMesh, facets: np.ndarray | None = None, degree: int = 4) -> np.ndarray:
    """Facet means of ``g``; returns an (nf, 3) array (zero on facets not listed)."""
    out = np.zeros((mesh.n_facets, 3))
    facets = np.arange(mesh.n_facets) if facets is None else np.asarray(facets)
    if len(facets) == 0:
        return out
    pts, w = facet_points(mesh, facets, degree)
    vals = g(pts)
    out[facets] = np.einsum("fq,fqc->fc", w, vals) / mesh.facet_areas[facets, None]
    return out


def cr_divergence(mesh: TetMesh, v: np.ndarray) -> np.ndarray:
    return np.trace(broken_gradient(mesh, v), axis1=1, axis2=2)


def h1_seminorm(mesh: TetMesh, v: np.ndarray) -> float:
    grad = broken_gradient(mesh, v)
    return float(np.sqrt(np.einsum("t,tck,tck->", mesh.volumes, grad, grad)))


def correct_boundary_flux(mesh: TetMesh, values: np.ndarray, kinds: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Remove the net boundary flux of Dirichlet facet values.

    The flux defect (quadrature error of the facet means) is pushed into the
    normal component on the curved part of the boundary, or spread over all
    boundary facets when there is none.  Returns the corrected values and the
    removed flux.
    """
    bf = mesh.boundary_facets
    n = mesh.facet_normals[bf]
    a = mesh.facet_areas[bf]
    flux = float(np.sum(a * np.einsum("fc,fc->f", values[bf], n)))
    if kinds is None:
        kinds = mesh.boundary_facet_kind()
    sel = kinds == 4
    if not np.any(sel):
        sel = np.ones(len(bf), dtype=bool)
    out = values.copy()
    out[bf[sel]] -= (flux / a[sel].sum()) * n[sel]
    return out, flux
