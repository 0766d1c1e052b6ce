"""Legacy ASCII VTK (version 4.2) unstructured-grid output."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import TetMesh

VTK_TETRA = 10


def _block(values: np.ndarray, fmt: str) -> str:
    return "\n".join(" ".join(fmt % v for v in row) for row in np.atleast_2d(values))


def write_vtk(mesh: TetMesh, path: str | Path, cell_data: dict | None = None, point_data: dict | None = None,
              title: str = "tetrahedral mesh") -> Path:
    """Write points, tetra cells and optional scalar/vector fields.

    ``cell_data`` values have shape (n_tets,) or (n_tets, 3); ``point_data``
    likewise over vertices.
    """
    path = Path(path)
    nv, nt = len(mesh.vertices), mesh.n_tets
    out = ["# vtk DataFile Version 4.2", title.replace("\n", " ")[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {nv} double", _block(mesh.vertices, "%.17g"),
           f"CELLS {nt} {5 * nt}", _block(np.column_stack([np.full(nt, 4), mesh.tets]), "%d"),
           f"CELL_TYPES {nt}", "\n".join([str(VTK_TETRA)] * nt)]
    for header, n, data in (("CELL_DATA", nt, cell_data), ("POINT_DATA", nv, point_data)):
        if not data:
            continue
        out.append(f"{header} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape[0] != n:
                raise ValueError(f"field {name!r} has {arr.shape[0]} entries, expected {n}")
            if arr.ndim == 1:
                out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _block(arr[:, None], "%.17g")]
            elif arr.shape[1:] == (3,):
                out += [f"VECTORS {name} double", _block(arr, "%.17g")]
            else:
                raise ValueError(f"field {name!r} must be scalar or 3-vector valued")
    path.write_text("\n".join(out) + "\n")
    return path


def read_vtk_counts(path: str | Path) -> dict:
    """Point and cell counts of a legacy file written by :func:`write_vtk`."""
    counts = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts and parts[0] in ("POINTS", "CELLS", "CELL_TYPES"):
            counts[parts[0].lower()] = int(parts[1])
    return counts


def write_solution(mesh: TetMesh, u: np.ndarray, p: np.ndarray, path: str | Path) -> Path:
    """Cellwise velocity (mean of the facet values), pressure and axis distance."""
    vf = np.asarray(u).reshape(-1, 3)[mesh.tet_facets].mean(axis=1)
    return write_vtk(mesh, path, cell_data={"velocity": vf, "pressure": p, "r_T": mesh.axis_distance()},
                     title="Crouzeix-Raviart Stokes solution")
