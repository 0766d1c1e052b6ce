"""RT0 and BDM1 reconstruction of Crouzeix-Raviart velocity fields.

All three maps (identity, RT0, BDM1) are represented the same way: a sparse
matrix taking the CR coefficient vector (``3 * facet + component``) to
discontinuous P1 nodal values, row index ``(4 * tet + local_vertex) * 3 + c``.
Assembling a load vector against reconstructed test functions is then
``R.T @ p1_load``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import TetMesh

_PAIRS = [(a, j) for a in range(4) for j in range(4) if j != a]


def _rows(tet, a, c):
    return (4 * tet + a) * 3 + c


def cr_nodal_matrix(mesh: TetMesh) -> sp.csr_matrix:
    """Vertex values of the CR field: ``v(x_a) = sum_i v_{F_i} (1 - 3 delta_ia)``."""
    nt = mesh.n_tets
    t = np.arange(nt)
    rows, cols, vals = [], [], []
    for a in range(4):
        for i in range(4):
            coef = -2.0 if i == a else 1.0
            for c in range(3):
                rows.append(_rows(t, a, c))
                cols.append(3 * mesh.tet_facets[:, i] + c)
                vals.append(np.full(nt, coef))
    return _coo(rows, cols, vals, (12 * nt, 3 * mesh.n_facets))


def _coo(rows, cols, vals, shape):
    m = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
    )
    return m.tocsr()


def _edge_by_gradient(mesh: TetMesh):
    """C[t, a, j, c, k] = (x_j - x_a)_c * d_k lambda_j for j != a."""
    p = mesh.vertices[mesh.tets]
    g = mesh.grad_bary
    out = {}
    for a, j in _PAIRS:
        out[a, j] = np.einsum("tc,tk->tck", p[:, j] - p[:, a], g[:, j])
    return out


def rt_nodal_matrix(mesh: TetMesh) -> sp.csr_matrix:
    """RT0 interpolant: ``w(x_a) = sum_{i != a} (v_{F_i} . grad lambda_i)(x_i - x_a)``."""
    nt = mesh.n_tets
    t = np.arange(nt)
    coef = _edge_by_gradient(mesh)
    rows, cols, vals = [], [], []
    for a, i in _PAIRS:
        for c in range(3):
            for k in range(3):
                rows.append(_rows(t, a, c))
                cols.append(3 * mesh.tet_facets[:, i] + k)
                vals.append(coef[a, i][:, c, k])
    return _coo(rows, cols, vals, (12 * nt, 3 * mesh.n_facets))


def _neighbour_vertex(mesh: TetMesh, j: int, a: int):
    """Neighbour across local facet j and the local index there of vertex a."""
    f = mesh.tet_facets[:, j]
    own = mesh.facet_tets[f]
    t = np.arange(mesh.n_tets)
    nb = np.where(own[:, 0] == t, own[:, 1], own[:, 0])
    interior = nb >= 0
    gv = mesh.tets[:, a]
    local = np.argmax(mesh.tets[np.where(interior, nb, 0)] == gv[:, None], axis=1)
    return nb, local, interior


def bdm_nodal_matrix(mesh: TetMesh, boundary: str = "mean") -> sp.csr_matrix:
    """BDM1 interpolant with averaged normal traces on interior facets.

    The BDM1 function on a tet is fixed by its normal components at the
    vertices of each facet: ``w(x_a) = sum_{j != a} (t_ja . grad lambda_j)(x_j - x_a)``
    with ``t_ja`` the trace at ``x_a`` seen through facet ``j``.  On boundary
    facets ``boundary="mean"`` keeps only the facet mean (so homogeneous CR
    fields map into H_0(div)); ``"full"`` uses the one-sided trace.
    """
    if boundary not in ("mean", "full"):
        raise ValueError("boundary must be 'mean' or 'full'")
    nt = mesh.n_tets
    t = np.arange(nt)
    coef = _edge_by_gradient(mesh)
    g_rows, g_cols, g_vals = [], [], []
    m_rows, m_cols, m_vals = [], [], []
    for a, j in _PAIRS:
        nb, a_nb, interior = _neighbour_vertex(mesh, j, a)
        weight_self = np.where(interior, 0.5, 1.0 if boundary == "full" else 0.0)
        for c in range(3):
            for k in range(3):
                cval = coef[a, j][:, c, k]
                g_rows.append(_rows(t, a, c))
                g_cols.append(_rows(t, a, k))
                g_vals.append(weight_self * cval)
                g_rows.append(_rows(t[interior], a, c))
                g_cols.append(_rows(nb[interior], a_nb[interior], k))
                g_vals.append(0.5 * cval[interior])
                if boundary == "mean":
                    m_rows.append(_rows(t[~interior], a, c))
                    m_cols.append(3 * mesh.tet_facets[~interior, j] + k)
                    m_vals.append(cval[~interior])
    G = _coo(g_rows, g_cols, g_vals, (12 * nt, 12 * nt))
    R = G @ cr_nodal_matrix(mesh)
    if boundary == "mean":
        R = R + _coo(m_rows, m_cols, m_vals, (12 * nt, 3 * mesh.n_facets))
    return R.tocsr()


def reconstruction_matrix(mesh: TetMesh, method: str) -> sp.csr_matrix:
    method = method.lower()
    if method == "cr":
        return cr_nodal_matrix(mesh)
    if method == "cr-rt":
        return rt_nodal_matrix(mesh)
    if method == "cr-bdm":
        return bdm_nodal_matrix(mesh)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class HDivField:
    """Materialised reconstruction: per-facet dofs plus P1 nodal values per tet.

    ``dofs`` are fluxes ``int_F w . n_F`` (RT0, shape (nf,)) or the moments
    ``int_F (w . n_F) lambda_b`` against the facet's barycentric coordinates
    (BDM1, shape (nf, 3), ordered like ``mesh.facets``).  Normals are the
    global facet normals.
    """

    kind: str
    dofs: np.ndarray
    nodal: np.ndarray  # (nt, 4, 3)
    mesh: TetMesh

    def evaluate(self, tet_ids, bary) -> np.ndarray:
        """Values at barycentric points ``bary`` (nq, 4) in tets ``tet_ids``."""
        return np.einsum("qa,bac->bqc", np.asarray(bary), self.nodal[np.asarray(tet_ids)])

    def divergence(self) -> np.ndarray:
        return np.einsum("tac,tac->t", self.nodal, self.mesh.grad_bary)

    def normal_trace_at_vertices(self, tet: np.ndarray, local_facet: np.ndarray) -> np.ndarray:
        """Normal component (global orientation) at the 3 sorted facet vertices, seen from ``tet``."""
        m = self.mesh
        f = m.tet_facets[tet, local_facet]
        n = m.facet_normals[f]
        out = np.empty((len(tet), 3))
        for b in range(3):
            gv = m.facets[f, b]
            a = np.argmax(m.tets[tet] == gv[:, None], axis=1)
            out[:, b] = np.einsum("ic,ic->i", self.nodal[tet, a], n)
        return out


def _facet_moments(mesh: TetMesh, nodal: np.ndarray) -> np.ndarray:
    """Moments int_F (w . n_F) lambda_b from the first owner of each facet."""
    first = mesh.facet_tets[:, 0]
    local = np.argmax(mesh.tet_facets[first] == np.arange(mesh.n_facets)[:, None], axis=1)
    field = HDivField("tmp", np.empty(0), nodal, mesh)
    g = field.normal_trace_at_vertices(first, local)
    mass = (np.ones((3, 3)) + np.eye(3)) / 12.0
    return mesh.facet_areas[:, None] * (g @ mass)


def _nodal(R: sp.spmatrix, v: np.ndarray, nt: int) -> np.ndarray:
    return (R @ np.asarray(v, dtype=float).reshape(-1)).reshape(nt, 4, 3)


def rt_interpolate(v: np.ndarray, mesh: TetMesh) -> HDivField:
    nodal = _nodal(rt_nodal_matrix(mesh), v, mesh.n_tets)
    vf = np.asarray(v, dtype=float).reshape(-1, 3)
    flux = mesh.facet_areas * np.einsum("fc,fc->f", vf, mesh.facet_normals)
    return HDivField("RT0", flux, nodal, mesh)


def bdm_interpolate(v: np.ndarray, mesh: TetMesh, boundary: str = "mean") -> HDivField:
    nodal = _nodal(bdm_nodal_matrix(mesh, boundary), v, mesh.n_tets)
    return HDivField("BDM1", _facet_moments(mesh, nodal), nodal, mesh)


def p1_l2_norm_sq(mesh: TetMesh, nodal: np.ndarray) -> np.ndarray:
    """Per-tet squared L2 norm of a P1 field given by vertex values (nt, 4, 3)."""
    s = np.einsum("tac,tac->t", nodal, nodal)
    tot = nodal.sum(axis=1)
    return mesh.volumes / 20.0 * (s + np.einsum("tc,tc->t", tot, tot))


def broken_gradient(mesh: TetMesh, v: np.ndarray) -> np.ndarray:
    """(nt, 3, 3) elementwise gradient of a CR field, row = component."""
    vf = np.asarray(v, dtype=float).reshape(-1, 3)[mesh.tet_facets]  # (nt, 4, 3)
    return -3.0 * np.einsum("tic,tik->tck", vf, mesh.grad_bary)


def measure_reconstruction_distance(meshes, sampler, kind: str = "RT0", h=None, boundary: str = "full") -> list[float]:
    """Ratios ``||v - I_h v||_0 / (h ||grad_h v||_0)`` per mesh.

    ``sampler(mesh)`` returns a CR coefficient vector; ``h`` defaults to the
    largest element diameter of each mesh.  ``boundary`` selects the BDM1
    boundary trace (see :func:`bdm_nodal_matrix`).  Fields reproduced up to
    roundoff (relative to ``||v||_0``) report a ratio of exactly zero.
    """
    ratios = []
    for k, mesh in enumerate(meshes):
        v = sampler(mesh)
        R = rt_nodal_matrix(mesh) if kind.upper().startswith("RT") else bdm_nodal_matrix(mesh, boundary)
        vh = _nodal(cr_nodal_matrix(mesh), v, mesh.n_tets)
        diff = vh - _nodal(R, v, mesh.n_tets)
        num = np.sqrt(p1_l2_norm_sq(mesh, diff).sum())
        if num <= 1e-12 * np.sqrt(p1_l2_norm_sq(mesh, vh).sum()):
            ratios.append(0.0)
            continue
        grad = broken_gradient(mesh, v)
        den = np.sqrt(np.einsum("t,tck,tck->", mesh.volumes, grad, grad))
        hk = h[k] if h is not None else mesh_diameter(mesh)
        ratios.append(float(num / (hk * den)))
    return ratios


def mesh_diameter(mesh: TetMesh) -> float:
    p = mesh.vertices[mesh.tets]
    best = 0.0
    for i in range(4):
        for j in range(i + 1, 4):
            best = max(best, float(np.linalg.norm(p[:, i] - p[:, j], axis=1).max()))
    return best
