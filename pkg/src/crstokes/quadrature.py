"""Quadrature on tetrahedra and triangles, with graded rules near the z-axis.

Regular elements use collapsed Gauss-Jacobi product rules (positive weights,
interior nodes, exact to any requested degree).  Elements with a vertex or an
edge on the singular axis are parametrised as ``x = (1 - s) P + s Q`` with
``P`` on the axis part and ``Q`` on the opposite simplex; then ``r(x) = s r(Q)``
and the radial variable ``s`` is split geometrically toward zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@dataclass(frozen=True)
class QuadratureConfig:
    base_degree: int = 8
    edge_subdivision_levels: int = 4
    ratio: float = 0.5
    inner_grading: int = 3  # s = a * u**q on the segment touching the axis

    def __post_init__(self):
        if self.base_degree < 2:
            raise ValueError("base_degree must be >= 2")
        if self.edge_subdivision_levels < 0:
            raise ValueError("edge_subdivision_levels must be >= 0")
        if not 0.0 < self.ratio < 1.0:
            raise ValueError("ratio must lie in (0, 1)")
        if self.inner_grading < 1:
            raise ValueError("inner_grading must be >= 1")

    def refined(self, extra_degree: int = 2, extra_levels: int = 2) -> "QuadratureConfig":
        return QuadratureConfig(
            self.base_degree + extra_degree, self.edge_subdivision_levels + extra_levels, self.ratio,
            self.inner_grading,
        )


def _npts(degree: int) -> int:
    return max(1, int(math.ceil((degree + 1) / 2)))


def gauss_jacobi01(n: int, alpha: float = 0.0):
    """Nodes/weights on [0, 1] for the weight ``(1 - s)**alpha``."""
    if alpha == 0:
        x, w = roots_legendre(n)
    else:
        x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1.0)


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Barycentric nodes (n, 3) and weights summing to 1 on the triangle."""
    n = _npts(degree)
    a, wa = gauss_jacobi01(n, 1.0)
    b, wb = gauss_jacobi01(n)
    A, B = np.meshgrid(a, b, indexing="ij")
    x = A.ravel()
    y = (B * (1.0 - A)).ravel()
    w = np.outer(wa, wb).ravel() * 2.0
    bary = np.column_stack([1.0 - x - y, x, y])
    return bary, w


@lru_cache(maxsize=None)
def tet_rule(degree: int):
    """Barycentric nodes (n, 4) and weights summing to 1 on the tetrahedron."""
    n = _npts(degree)
    a, wa = gauss_jacobi01(n, 2.0)
    b, wb = gauss_jacobi01(n, 1.0)
    c, wc = gauss_jacobi01(n)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    x = A.ravel()
    y = (B * (1.0 - A)).ravel()
    z = (C * (1.0 - A) * (1.0 - B)).ravel()
    w = (wa[:, None, None] * wb[None, :, None] * wc[None, None, :]).ravel() * 6.0
    bary = np.column_stack([1.0 - x - y - z, x, y, z])
    return bary, w


def _graded_segments(levels: int, ratio: float):
    """Breakpoints 0 < ratio**levels < ... < ratio < 1 of the radial variable."""
    pts = [0.0] + [ratio ** k for k in range(levels, 0, -1)] + [1.0]
    return list(zip(pts[:-1], pts[1:]))


def _radial_rule(degree: int, levels: int, ratio: float, jac_power: int, inner_grading: int = 1):
    """Composite Gauss rule for s in (0, 1); the Jacobian factor is applied by the caller.

    The segment touching s = 0 is mapped by ``s = hi * u**q`` so that integrands
    behaving like a fractional power of ``s`` become smoother in ``u``.  With
    ``q = 1`` the rule is exact for polynomials of degree ``degree + jac_power``.
    """
    n = _npts(degree + jac_power)
    x, w = roots_legendre(n)
    u, wu = 0.5 * (x + 1.0), 0.5 * w
    nodes, weights = [], []
    for lo, hi in _graded_segments(levels, ratio):
        if lo == 0.0 and inner_grading > 1:
            q = inner_grading
            nu_ = _npts(q * (degree + jac_power + 1))
            xg, wg = roots_legendre(nu_)
            ug, wug = 0.5 * (xg + 1.0), 0.5 * wg
            nodes.append(hi * ug**q)
            weights.append(hi * q * ug ** (q - 1) * wug)
            continue
        nodes.append(lo + (hi - lo) * u)
        weights.append(wu * (hi - lo))
    return np.concatenate(nodes), np.concatenate(weights)


@lru_cache(maxsize=None)
def axis_rule(axis_vertices: tuple[int, ...], degree: int, levels: int, ratio: float, inner_grading: int = 1):
    """Rule for a tet whose vertices ``axis_vertices`` lie on the singular axis.

    Returns barycentric nodes (n, 4) and weights summing to 1.
    """
    axis_vertices = tuple(sorted(axis_vertices))
    rest = [i for i in range(4) if i not in axis_vertices]
    if len(axis_vertices) == 0:
        return tet_rule(degree)
    if len(axis_vertices) == 1:
        (i,) = axis_vertices
        s, ws = _radial_rule(degree, levels, ratio, 2, inner_grading)
        tb, tw = triangle_rule(degree)
        bary = np.zeros((len(s), len(tw), 4))
        bary[:, :, i] = (1.0 - s)[:, None]
        for k, j in enumerate(rest):
            bary[:, :, j] = s[:, None] * tb[None, :, k]
        w = (3.0 * s**2 * ws)[:, None] * tw[None, :]
        return bary.reshape(-1, 4), w.ravel()
    if len(axis_vertices) == 2:
        i, j = axis_vertices
        k, m = rest
        s, ws = _radial_rule(degree, levels, ratio, 2, inner_grading)
        t, wt = gauss_jacobi01(_npts(degree))
        S, A, B = np.meshgrid(s, t, t, indexing="ij")
        bary = np.zeros(S.shape + (4,))
        bary[..., i] = (1.0 - S) * (1.0 - A)
        bary[..., j] = (1.0 - S) * A
        bary[..., k] = S * (1.0 - B)
        bary[..., m] = S * B
        w = 6.0 * (s * (1.0 - s) * ws)[:, None, None] * wt[None, :, None] * wt[None, None, :]
        return bary.reshape(-1, 4), w.ravel()
    raise ValueError("a non-degenerate tetrahedron has at most two vertices on a line")


def _mask_key(mask_row) -> tuple[int, ...]:
    return tuple(int(i) for i in np.flatnonzero(mask_row))


class TetQuadrature:
    """Iterate quadrature blocks over a mesh.

    Each block is ``(tet_ids, points, weights)`` with ``points`` of shape
    (nb, nq, 3) and physical ``weights`` (nb, nq).  Blocks are visited in a
    fixed order so that reductions are deterministic.
    """

    def __init__(self, mesh, quad: QuadratureConfig | None = None, chunk_points: int = 400_000):
        self.mesh = mesh
        self.quad = quad or QuadratureConfig()
        self.chunk_points = chunk_points
        mask = mesh.axis_vertex_mask()
        self.groups: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        keys = [_mask_key(row) for row in mask]
        by_key: dict[tuple[int, ...], list[int]] = {}
        for t, k in enumerate(keys):
            by_key.setdefault(k, []).append(t)
        for key in sorted(by_key, key=lambda k: (len(k), k)):
            bary, w = axis_rule(key, self.quad.base_degree, self.quad.edge_subdivision_levels, self.quad.ratio,
                                self.quad.inner_grading)
            self.groups.append((np.asarray(by_key[key]), bary, w))

    def blocks(self):
        verts = self.mesh.vertices
        tets = self.mesh.tets
        vol = self.mesh.volumes
        for ids, bary, w in self.groups:
            step = max(1, self.chunk_points // len(w))
            for start in range(0, len(ids), step):
                sel = ids[start : start + step]
                p = verts[tets[sel]]  # (nb, 4, 3)
                pts = np.einsum("qk,bkd->bqd", bary, p)
                yield sel, bary, pts, vol[sel][:, None] * w[None, :]

    def integrate(self, func, shape=()) -> np.ndarray:
        """Per-tet integrals of ``func(points, tet_ids, bary) -> (nb, nq, *shape)``."""
        out = np.zeros((self.mesh.n_tets,) + tuple(shape))
        for sel, bary, pts, w in self.blocks():
            vals = func(pts, sel, bary)
            out[sel] = np.einsum("bq,bq...->b...", w, vals)
        return out

    @property
    def n_points(self) -> int:
        return sum(len(ids) * len(w) for ids, _, w in self.groups)


def facet_points(mesh, facet_ids, degree: int = 4):
    """Physical nodes (nf, nq, 3) and weights (nf, nq) on the given facets."""
    bary, w = triangle_rule(degree)
    q = mesh.vertices[mesh.facets[facet_ids]]
    pts = np.einsum("qk,fkd->fqd", bary, q)
    return pts, mesh.facet_areas[facet_ids][:, None] * w[None, :]


def red_children(simplex: np.ndarray) -> list[np.ndarray]:
    """Eight children of a tetrahedron (rows are vertices) under red refinement."""
    v = simplex
    m = {(i, j): 0.5 * (v[i] + v[j]) for i, j in combinations(range(4), 2)}
    return [
        np.array([v[0], m[0, 1], m[0, 2], m[0, 3]]),
        np.array([m[0, 1], v[1], m[1, 2], m[1, 3]]),
        np.array([m[0, 2], m[1, 2], v[2], m[2, 3]]),
        np.array([m[0, 3], m[1, 3], m[2, 3], v[3]]),
        np.array([m[0, 1], m[0, 2], m[0, 3], m[1, 3]]),
        np.array([m[0, 1], m[0, 2], m[1, 2], m[1, 3]]),
        np.array([m[0, 2], m[0, 3], m[1, 3], m[2, 3]]),
        np.array([m[0, 2], m[1, 2], m[1, 3], m[2, 3]]),
    ]
