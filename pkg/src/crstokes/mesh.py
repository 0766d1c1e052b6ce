"""Graded sector meshes: 2D triangulation, prismatic extrusion, quality audit.

The domain is the cylindrical sector ``{0 < r < 1, 0 < phi < omega, 0 < z < z_len}``
with the concave edge on the z-axis.  The 2D cross-section is built from a coarse
fan by conforming longest-edge bisection until every triangle satisfies the
grading law, then extruded into uniform layers and split into tetrahedra.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# boundary edge markers of the 2D section
WALL_START = 1  # phi = 0
WALL_END = 2  # phi = omega
ARC = 3  # r = 1

AXIS_TOL = 1e-12


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class GradingConfig:
    h: float
    mu: float = 1.0
    big_r: float = 1.0
    omega: float = 1.5 * math.pi
    z_len: float = 1.0
    size_constant: float = 2.0
    max_elements: int = 2_000_000

    def __post_init__(self):
        if not 0.0 < self.h <= 1.0:
            raise MeshError(f"h must lie in (0, 1], got {self.h}")
        if not 0.0 < self.mu <= 1.0:
            raise MeshError(f"mu must lie in (0, 1], got {self.mu}")
        if not 0.0 < self.big_r <= 1.0:
            raise MeshError(f"big_r must lie in (0, 1], got {self.big_r}")
        if not math.pi < self.omega < 2.0 * math.pi:
            raise MeshError(f"omega must lie in (pi, 2 pi), got {self.omega}")
        if not self.z_len > 0.0:
            raise MeshError(f"z_len must be positive, got {self.z_len}")

    @property
    def n_layers(self) -> int:
        return int(math.ceil(self.z_len / self.h - 1e-12))

    def target_size(self, r):
        """Admissible in-plane element size at distance ``r`` from the corner."""
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            graded = self.h * np.power(np.where(r > 0, r, 1.0), 1.0 - self.mu)
        size = np.where(r >= self.big_r, self.h, graded)
        return np.where(r <= 0.0, self.h ** (1.0 / self.mu), size)


@dataclass
class Mesh2D:
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3), counter-clockwise
    boundary_edges: np.ndarray  # (ne, 2)
    boundary_markers: np.ndarray  # (ne,)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        edges = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(edges, axis=2).max(axis=1)

    def corner_distances(self) -> np.ndarray:
        """Distance r_D from the origin to each (closed) triangle."""
        p = self.vertices[self.triangles]
        best = np.full(len(p), np.inf)
        for a, b in ((0, 1), (1, 2), (2, 0)):
            best = np.minimum(best, _segment_distance(p[:, a], p[:, b]))
        return best

    def edge_owner_counts(self) -> dict[tuple[int, int], int]:
        counts: dict[tuple[int, int], int] = {}
        for tri in self.triangles.tolist():
            for k in range(3):
                e = tuple(sorted((tri[k], tri[(k + 1) % 3])))
                counts[e] = counts.get(e, 0) + 1
        return counts


def _segment_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    dd = np.einsum("ij,ij->i", d, d)
    t = np.clip(-np.einsum("ij,ij->i", a, d) / np.where(dd > 0, dd, 1.0), 0.0, 1.0)
    return np.linalg.norm(a + t[:, None] * d, axis=1)


def _snap(x: float) -> float:
    return 0.0 if abs(x) < 1e-14 else x


class _Bisector:
    """Conforming longest-edge (Rivara) bisection on a mutable triangle set."""

    def __init__(self, vertices, triangles, boundary):
        self.verts: list[tuple[float, float]] = [tuple(v) for v in vertices]
        self.tris: dict[int, tuple[int, int, int]] = {}
        self.edge_tris: dict[tuple[int, int], list[int]] = {}
        self.boundary: dict[tuple[int, int], int] = dict(boundary)
        self.midpoints: dict[tuple[int, int], int] = {}
        self._next = 0
        for tri in triangles:
            self._add(tuple(tri))

    def _add(self, tri) -> int:
        tid = self._next
        self._next += 1
        self.tris[tid] = tri
        for k in range(3):
            e = _key(tri[k], tri[(k + 1) % 3])
            self.edge_tris.setdefault(e, []).append(tid)
        return tid

    def _remove(self, tid):
        tri = self.tris.pop(tid)
        for k in range(3):
            e = _key(tri[k], tri[(k + 1) % 3])
            owners = self.edge_tris[e]
            owners.remove(tid)
            if not owners:
                del self.edge_tris[e]

    def _length(self, e) -> float:
        (x0, y0), (x1, y1) = self.verts[e[0]], self.verts[e[1]]
        return math.hypot(x1 - x0, y1 - y0)

    def longest_edge(self, tid) -> tuple[int, int]:
        tri = self.tris[tid]
        edges = [_key(tri[k], tri[(k + 1) % 3]) for k in range(3)]
        # ties broken by vertex keys so that the order is strict and global
        return max(edges, key=lambda e: (round(self._length(e), 13), e))

    def neighbour(self, tid, e):
        owners = self.edge_tris[e]
        for other in owners:
            if other != tid:
                return other
        return None

    def _midpoint(self, e) -> int:
        if e in self.midpoints:
            return self.midpoints[e]
        (x0, y0), (x1, y1) = self.verts[e[0]], self.verts[e[1]]
        x, y = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
        if self.boundary.get(e) == ARC:
            r = math.hypot(x, y)
            x, y = x / r, y / r
        self.verts.append((_snap(x), _snap(y)))
        m = len(self.verts) - 1
        self.midpoints[e] = m
        marker = self.boundary.pop(e, None)
        if marker is not None:
            self.boundary[_key(e[0], m)] = marker
            self.boundary[_key(m, e[1])] = marker
        return m

    def _split(self, tid, e, m):
        tri = self.tris[tid]
        # rotate so that the split edge is (tri[0], tri[1])
        for k in range(3):
            if _key(tri[k], tri[(k + 1) % 3]) == e:
                a, b, c = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
                break
        self._remove(tid)
        self._add((a, m, c))
        self._add((m, b, c))

    def bisect(self, tid):
        """Bisect ``tid`` by its longest edge, refining along the LEPP first."""
        while tid in self.tris:
            current = tid
            while True:
                e = self.longest_edge(current)
                nb = self.neighbour(current, e)
                if nb is None:
                    m = self._midpoint(e)
                    self._split(current, e, m)
                    break
                if self.longest_edge(nb) == e:
                    m = self._midpoint(e)
                    self._split(current, e, m)
                    self._split(nb, e, m)
                    break
                current = nb

    def to_mesh(self) -> Mesh2D:
        ids = sorted(self.tris)
        tris = np.array([self.tris[t] for t in ids], dtype=np.int64)
        edges = sorted(self.boundary)
        return Mesh2D(
            vertices=np.array(self.verts, dtype=float),
            triangles=tris,
            boundary_edges=np.array(edges, dtype=np.int64).reshape(-1, 2),
            boundary_markers=np.array([self.boundary[e] for e in edges], dtype=np.int64),
        )


def _key(a, b):
    return (a, b) if a < b else (b, a)


def _coarse_fan(omega: float, n_sectors: int | None = None):
    if n_sectors is None:
        n_sectors = int(math.ceil(omega / (math.pi / 4) - 1e-12))
    verts = [(0.0, 0.0)]
    for k in range(n_sectors + 1):
        t = omega * k / n_sectors
        verts.append((_snap(math.cos(t)), _snap(math.sin(t))))
    tris = [(0, k + 1, k + 2) for k in range(n_sectors)]
    boundary = {_key(0, 1): WALL_START, _key(0, n_sectors + 1): WALL_END}
    for k in range(n_sectors):
        boundary[_key(k + 1, k + 2)] = ARC
    return verts, tris, boundary


def _violations(bis: _Bisector, cfg: GradingConfig) -> list[int]:
    ids = list(bis.tris)
    if not ids:
        return []
    verts = np.asarray(bis.verts)
    p = verts[np.array([bis.tris[t] for t in ids])]
    diam = np.zeros(len(ids))
    dist = np.full(len(ids), np.inf)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        diam = np.maximum(diam, np.linalg.norm(p[:, b] - p[:, a], axis=1))
        dist = np.minimum(dist, _segment_distance(p[:, a], p[:, b]))
    dist[dist < AXIS_TOL] = 0.0
    bad = diam > cfg.target_size(dist) * (1.0 + 1e-12)
    # coarsest first: keeps the LEPP chains short
    order = np.argsort(-diam[bad], kind="stable")
    return [ids[i] for i in np.flatnonzero(bad)[order]]


def build_sector_mesh_2d(cfg: GradingConfig) -> Mesh2D:
    """Triangulate the sector so that every triangle obeys the grading law.

    Triangles are bisected until ``h_D <= target_size(r_D)``; the reported
    size constant ``cfg.size_constant`` is the slack used by the audit.
    """
    verts, tris, boundary = _coarse_fan(cfg.omega)
    bis = _Bisector(verts, tris, boundary)
    while True:
        bad = _violations(bis, cfg)
        if not bad:
            break
        for tid in bad:
            if tid in bis.tris:
                bis.bisect(tid)
        if len(bis.tris) * 3 * cfg.n_layers > cfg.max_elements:
            raise MeshError(
                f"refinement exceeds the element budget of {cfg.max_elements} tetrahedra"
            )
    return bis.to_mesh()


@dataclass
class TetMesh:
    """Conforming tetrahedral mesh with facet connectivity and geometry.

    Local facet ``i`` of a tetrahedron is the one opposite its vertex ``i``.
    Interior facets are oriented from their lower-index owner to the higher one;
    boundary facets point outward.
    """

    vertices: np.ndarray  # (nv, 3)
    tets: np.ndarray  # (nt, 4), positively oriented
    omega: float = 1.5 * math.pi
    z_len: float = 1.0
    facets: np.ndarray = field(init=False)  # (nf, 3) sorted vertex triples
    tet_facets: np.ndarray = field(init=False)  # (nt, 4)
    facet_tets: np.ndarray = field(init=False)  # (nf, 2), -1 when absent
    volumes: np.ndarray = field(init=False)
    grad_bary: np.ndarray = field(init=False)  # (nt, 4, 3)
    facet_normals: np.ndarray = field(init=False)
    facet_areas: np.ndarray = field(init=False)
    facet_barycenters: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.tets = np.ascontiguousarray(self.tets, dtype=np.int64)
        self._orient()
        self._build_facets()
        self._build_geometry()

    def _orient(self):
        p = self.vertices[self.tets]
        vol = np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0])
        if np.any(np.abs(vol) <= 1e-300):
            raise MeshError("degenerate tetrahedron")
        flip = vol < 0
        self.tets[flip] = self.tets[flip][:, [1, 0, 2, 3]]

    def _build_facets(self):
        nt = len(self.tets)
        local = np.stack([self.tets[:, [j for j in range(4) if j != i]] for i in range(4)], axis=1)
        keys = np.sort(local.reshape(-1, 3), axis=1)
        facets, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        if np.any(counts > 2):
            raise MeshError("non-manifold facet with more than two owners")
        self.facets = facets
        self.tet_facets = inverse.reshape(nt, 4)
        owner_of = np.repeat(np.arange(nt), 4)
        order = np.argsort(inverse, kind="stable")
        ft = np.full((len(facets), 2), -1, dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        ft[:, 0] = owner_of[order[starts]]
        two = counts == 2
        ft[two, 1] = owner_of[order[starts[two] + 1]]
        self.facet_tets = ft

    def _build_geometry(self):
        p = self.vertices[self.tets]
        jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)
        det = np.linalg.det(jac)
        self.volumes = det / 6.0
        inv = np.linalg.inv(jac)  # rows: gradients of bary coords 1..3
        g = np.empty((len(p), 4, 3))
        g[:, 1:] = inv
        g[:, 0] = -inv.sum(axis=1)
        self.grad_bary = g

        q = self.vertices[self.facets]
        cr = np.cross(q[:, 1] - q[:, 0], q[:, 2] - q[:, 0])
        area2 = np.linalg.norm(cr, axis=1)
        self.facet_areas = 0.5 * area2
        self.facet_barycenters = q.mean(axis=1)
        normals = cr / area2[:, None]
        # orient outward from the first owner
        first = self.facet_tets[:, 0]
        local = np.argmax(self.tet_facets[first] == np.arange(len(q))[:, None], axis=1)
        opposite = self.vertices[self.tets[first, local]]
        sign = np.sign(np.einsum("ij,ij->i", normals, self.facet_barycenters - opposite))
        self.facet_normals = normals * sign[:, None]

    # -- convenience -------------------------------------------------------
    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_facets(self) -> int:
        return len(self.facets)

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_tets[:, 1] < 0)

    @property
    def is_boundary_facet(self) -> np.ndarray:
        return self.facet_tets[:, 1] < 0

    def outward_normals(self) -> np.ndarray:
        """(nt, 4, 3) outward unit normals of the local facets."""
        g = self.grad_bary
        return -g / np.linalg.norm(g, axis=2)[..., None]

    def local_facet_areas(self) -> np.ndarray:
        return 3.0 * self.volumes[:, None] * np.linalg.norm(self.grad_bary, axis=2)

    def facet_signs(self) -> np.ndarray:
        """(nt, 4) +1 where the global facet normal is outward for the tet."""
        owner = self.facet_tets[self.tet_facets, 0]
        return np.where(owner == np.arange(self.n_tets)[:, None], 1.0, -1.0)

    def axis_distance(self) -> np.ndarray:
        """r_T: smallest vertex distance to the z-axis per tetrahedron."""
        r = np.hypot(self.vertices[:, 0], self.vertices[:, 1])
        return r[self.tets].min(axis=1)

    def axis_vertex_mask(self) -> np.ndarray:
        r = np.hypot(self.vertices[:, 0], self.vertices[:, 1])
        return r[self.tets] < AXIS_TOL

    def extents(self) -> np.ndarray:
        """(nt, 3) projected lengths h_1, h_2, h_3 on the coordinate axes."""
        p = self.vertices[self.tets]
        return p.max(axis=1) - p.min(axis=1)

    def boundary_facet_kind(self) -> np.ndarray:
        """Label boundary facets: 0 bottom, 1 top, 2 wall phi=0, 3 wall phi=omega, 4 arc, -1 other."""
        bf = self.boundary_facets
        q = self.vertices[self.facets[bf]]
        kind = np.full(len(bf), -1, dtype=np.int64)
        tol = 1e-10
        r = np.hypot(q[..., 0], q[..., 1])
        kind[np.all(np.abs(q[..., 2]) < tol, axis=1)] = 0
        kind[np.all(np.abs(q[..., 2] - self.z_len) < tol, axis=1)] = 1
        start = (np.abs(q[..., 1]) < tol) & (q[..., 0] >= -tol)
        kind[np.all(start, axis=1)] = 2
        c, s = math.cos(self.omega), math.sin(self.omega)
        # points on the ray at angle omega: cross product with its direction vanishes
        end = (np.abs(q[..., 0] * s - q[..., 1] * c) < tol) & (q[..., 0] * c + q[..., 1] * s >= -tol)
        kind[np.all(end, axis=1) & (kind < 0)] = 3
        kind[np.all(np.abs(r - 1.0) < tol, axis=1) & (kind < 0)] = 4
        return kind


def extrude_to_tets(m2d: Mesh2D, cfg: GradingConfig) -> TetMesh:
    """Extrude into ``ceil(z_len / h)`` layers and split every prism into 3 tets.

    Quadrilateral faces are cut along the diagonal joining the bottom copy of
    the lower-index vertex to the top copy of the higher-index one, so that
    neighbouring prisms always agree.
    """
    nz = cfg.n_layers
    nv = len(m2d.vertices)
    zs = np.linspace(0.0, cfg.z_len, nz + 1)
    verts = np.concatenate(
        [np.column_stack([m2d.vertices, np.full(nv, z)]) for z in zs], axis=0
    )
    tri = np.sort(m2d.triangles, axis=1)
    v0, v1, v2 = tri[:, 0], tri[:, 1], tri[:, 2]
    blocks = []
    for k in range(nz):
        b, t = k * nv, (k + 1) * nv
        blocks.append(np.column_stack([v0 + b, v1 + b, v2 + b, v2 + t]))
        blocks.append(np.column_stack([v0 + b, v1 + b, v1 + t, v2 + t]))
        blocks.append(np.column_stack([v0 + b, v0 + t, v1 + t, v2 + t]))
    tets = np.concatenate(blocks, axis=0)
    return TetMesh(verts, tets, omega=cfg.omega, z_len=cfg.z_len)


def build_mesh(cfg: GradingConfig) -> TetMesh:
    return extrude_to_tets(build_sector_mesh_2d(cfg), cfg)


@dataclass
class MeshQualityReport:
    max_face_angle: float
    max_dihedral_angle: float
    n_tets: int
    n_facets: int
    n_vertices: int
    grading_violations: int
    size_constant: float | None
    min_extent: list[float]
    max_extent: list[float]
    min_volume: float
    bad_facets: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def face_angles(p: np.ndarray) -> np.ndarray:
    """All planar angles of the 4 faces of each tet, shape (nt, 12)."""
    out = []
    for face in ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)):
        for k in range(3):
            a = p[:, face[k]]
            b = p[:, face[(k + 1) % 3]]
            c = p[:, face[(k + 2) % 3]]
            out.append(_angle(b - a, c - a))
    return np.stack(out, axis=1)


def dihedral_angles(p: np.ndarray) -> np.ndarray:
    """The 6 interior dihedral angles of each tet, shape (nt, 6)."""
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=2)
    inv = np.linalg.inv(jac)
    g = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)
    n = g / np.linalg.norm(g, axis=2)[..., None]
    out = []
    for i in range(4):
        for j in range(i + 1, 4):
            cosine = -np.einsum("ij,ij->i", n[:, i], n[:, j])
            out.append(np.arccos(np.clip(cosine, -1.0, 1.0)))
    return np.stack(out, axis=1)


def _angle(u, v):
    c = np.einsum("ij,ij->i", u, v) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
    return np.arccos(np.clip(c, -1.0, 1.0))


def mesh_quality(m: TetMesh, cfg: GradingConfig | None = None) -> MeshQualityReport:
    p = m.vertices[m.tets]
    ext = m.extents()
    violations = 0
    if cfg is not None:
        r = m.axis_distance()
        r = np.where(r < AXIS_TOL, 0.0, r)
        limit = cfg.size_constant * cfg.target_size(r)
        inplane = np.maximum(ext[:, 0], ext[:, 1])
        h3_ok = (ext[:, 2] >= 0.5 * cfg.h - 1e-12) & (ext[:, 2] <= 2.0 * cfg.h + 1e-12)
        violations = int(np.count_nonzero((inplane > limit) | ~h3_ok))
    kinds = m.boundary_facet_kind()
    return MeshQualityReport(
        max_face_angle=float(face_angles(p).max()),
        max_dihedral_angle=float(dihedral_angles(p).max()),
        n_tets=m.n_tets,
        n_facets=m.n_facets,
        n_vertices=len(m.vertices),
        grading_violations=violations,
        size_constant=cfg.size_constant if cfg is not None else None,
        min_extent=ext.min(axis=0).tolist(),
        max_extent=ext.max(axis=0).tolist(),
        min_volume=float(m.volumes.min()),
        bad_facets=int(np.count_nonzero(kinds < 0)),
    )
