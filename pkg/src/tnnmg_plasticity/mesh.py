"""Triangle meshes, uniform refinement and the square-with-a-hole grid.

Mesh files are plain ASCII with three counted sections::

    VERTICES n
    x y
    ...
    TRIANGLES m
    i j k
    ...
    BOUNDARY b
    i j Marker
    ...

Indices are 0-based.  Boundary markers are one of :data:`MARKERS`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

DIRICHLET_X = "DirichletX"
DIRICHLET_Y = "DirichletY"
NEUMANN_TOP = "NeumannTop"
HOLE = "Hole"
FREE = "Free"
MARKERS = (DIRICHLET_X, DIRICHLET_Y, NEUMANN_TOP, HOLE, FREE)

HOLE_CENTER = np.array([10.0, 0.0])
HOLE_RADIUS = 1.0


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "boundary_edges",
                           np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2))
        object.__setattr__(self, "boundary_markers", np.asarray(self.boundary_markers, dtype=object))

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def __repr__(self):
        return f"TriMesh({self.n_triangles} triangles, {self.n_vertices} vertices)"

    def edges(self):
        """Unique undirected edges ``(n_edges, 2)`` and the edge id of each triangle side.

        Side ``s`` of a triangle joins local vertices ``s`` and ``(s+1) % 3``.
        """
        t = self.triangles
        sides = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1).reshape(-1, 2)
        edges, inverse = np.unique(np.sort(sides, axis=1), axis=0, return_inverse=True)
        return edges, inverse.reshape(-1, 3)

    def geometry(self):
        """Areas ``(m,)`` and P1 basis gradients ``(m, 3, 2)`` of all triangles."""
        return element_geometry(self.vertices, self.triangles)

    def marked_vertices(self, marker: str) -> np.ndarray:
        sel = self.boundary_edges[self.boundary_markers == marker]
        return np.unique(sel)

    def validate(self):
        n = self.n_vertices
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise MeshError("triangle vertex index out of range")
        areas, _ = self.geometry()
        if np.any(areas <= 0):
            raise MeshError(f"{np.sum(areas <= 0)} triangles are not positively oriented")
        edges, side_ids = self.edges()
        counts = np.bincount(side_ids.ravel(), minlength=len(edges))
        if counts.max() > 2:
            raise MeshError("non-manifold edge")
        boundary = {tuple(e) for e in edges[counts == 1]}
        marked = {tuple(sorted(e)) for e in self.boundary_edges}
        if boundary != marked:
            raise MeshError("boundary edges do not match the single-triangle edges")
        unknown = set(self.boundary_markers) - set(MARKERS)
        if unknown:
            raise MeshError(f"unknown boundary markers {unknown}")
        return self


def element_geometry(vertices, triangles):
    x = vertices[triangles]  # (m, 3, 2)
    e1 = x[:, 1] - x[:, 0]
    e2 = x[:, 2] - x[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * det
    # gradients of barycentric coordinates: inverse transpose of the Jacobian
    inv = np.empty((len(det), 2, 2))
    inv[:, 0, 0] = e2[:, 1] / det
    inv[:, 0, 1] = -e2[:, 0] / det
    inv[:, 1, 0] = -e1[:, 1] / det
    inv[:, 1, 1] = e1[:, 0] / det
    g1 = inv[:, 0]
    g2 = inv[:, 1]
    grads = np.stack([-g1 - g2, g1, g2], axis=1)
    return area, grads


def p1_element_geometry(mesh: TriMesh, tri: int):
    """Area and the three constant nodal-basis gradients of one triangle."""
    area, grads = element_geometry(mesh.vertices, mesh.triangles[tri:tri + 1])
    return float(area[0]), grads[0]


# ---------------------------------------------------------------------------
# file format

def write_mesh(mesh: TriMesh, path):
    with open(path, "w") as fh:
        fh.write(f"VERTICES {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"TRIANGLES {mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            fh.write(f"{a} {b} {c}\n")
        fh.write(f"BOUNDARY {len(mesh.boundary_edges)}\n")
        for (i, j), m in zip(mesh.boundary_edges, mesh.boundary_markers):
            fh.write(f"{i} {j} {m}\n")


def parse_mesh(text: str) -> TriMesh:
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    pos = 0

    def section(name):
        nonlocal pos
        head = lines[pos]
        if head[0] != name:
            raise MeshError(f"expected section {name}, got {head[0]}")
        count = int(head[1])
        rows = lines[pos + 1:pos + 1 + count]
        if len(rows) != count:
            raise MeshError(f"section {name} truncated")
        pos += 1 + count
        return rows

    verts = np.array([[float(v) for v in r] for r in section("VERTICES")])
    tris = np.array([[int(v) for v in r] for r in section("TRIANGLES")], dtype=np.int64)
    brows = section("BOUNDARY")
    bedges = np.array([[int(r[0]), int(r[1])] for r in brows], dtype=np.int64)
    markers = np.array([r[2] for r in brows], dtype=object)
    return TriMesh(verts, tris, bedges, markers)


def read_mesh(path) -> TriMesh:
    return parse_mesh(Path(path).read_text())


def benchmark_coarse_mesh() -> TriMesh:
    """The 176-triangle level-1 grid of the square-with-a-hole benchmark."""
    text = resources.files("tnnmg_plasticity").joinpath("data/coarse_mesh.txt").read_text()
    return parse_mesh(text).validate()


# ---------------------------------------------------------------------------
# refinement

def uniform_refine(mesh: TriMesh):
    """Red refinement; returns the fine mesh and the P1 prolongation matrix.

    Midpoints of hole edges are moved radially onto the circle.  The
    prolongation keeps the unsnapped weights (1 on old vertices, 1/2 on
    midpoints).
    """
    n = mesh.n_vertices
    edges, side_ids = mesh.edges()
    ne = len(edges)
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])

    # boundary edges -> global edge ids
    key = {tuple(e): k for k, e in enumerate(edges)}
    bids = np.array([key[tuple(sorted(e))] for e in mesh.boundary_edges], dtype=np.int64)
    hole = bids[mesh.boundary_markers == HOLE]
    if len(hole):
        r = mids[hole] - HOLE_CENTER
        mids[hole] = HOLE_CENTER + HOLE_RADIUS * r / np.linalg.norm(r, axis=1)[:, None]

    verts = np.vstack([mesh.vertices, mids])
    t = mesh.triangles
    m01, m12, m20 = (n + side_ids[:, k] for k in range(3))
    tris = np.concatenate([
        np.column_stack([t[:, 0], m01, m20]),
        np.column_stack([m01, t[:, 1], m12]),
        np.column_stack([m20, m12, t[:, 2]]),
        np.column_stack([m01, m12, m20]),
    ])
    # keep children of one parent adjacent
    order = np.arange(4 * len(t)).reshape(4, -1).T.ravel()
    tris = tris[order]

    mid_b = n + bids
    bedges = np.empty((2 * len(bids), 2), dtype=np.int64)
    bedges[0::2, 0] = mesh.boundary_edges[:, 0]
    bedges[0::2, 1] = mid_b
    bedges[1::2, 0] = mid_b
    bedges[1::2, 1] = mesh.boundary_edges[:, 1]
    markers = np.repeat(mesh.boundary_markers, 2)

    fine = TriMesh(verts, tris, bedges, markers)
    areas, _ = fine.geometry()
    if np.any(areas <= 0):
        raise MeshError("refinement produced a degenerate triangle")

    rows = np.concatenate([np.arange(n), n + np.arange(ne), n + np.arange(ne)])
    cols = np.concatenate([np.arange(n), edges[:, 0], edges[:, 1]])
    vals = np.concatenate([np.ones(n), np.full(ne, 0.5), np.full(ne, 0.5)])
    prolong = sp.csr_matrix((vals, (rows, cols)), shape=(n + ne, n))
    return fine, prolong


@dataclass
class MeshHierarchy:
    """Nested meshes from coarse (index 0) to fine, with P1 prolongations.

    ``prolongations[l]`` maps scalar P1 coefficients on ``levels[l]`` to
    ``levels[l + 1]``.
    """

    levels: list
    prolongations: list

    @property
    def finest(self) -> TriMesh:
        return self.levels[-1]

    def __len__(self):
        return len(self.levels)


def build_hierarchy(coarse: TriMesh, n_levels: int) -> MeshHierarchy:
    if n_levels < 1:
        raise ValueError("need at least one level")
    levels, prolongs = [coarse], []
    for _ in range(n_levels - 1):
        fine, P = uniform_refine(levels[-1])
        levels.append(fine)
        prolongs.append(P)
    return MeshHierarchy(levels, prolongs)


def benchmark_hierarchy(level: int) -> MeshHierarchy:
    """Hierarchy whose finest mesh is refinement level ``level`` (1 = coarse grid)."""
    if not 1 <= level <= 6:
        raise ValueError("refinement level must be between 1 and 6")
    return build_hierarchy(benchmark_coarse_mesh(), level)


# ---------------------------------------------------------------------------
# visualisation output

def write_vtk(path, mesh: TriMesh, point_vectors=None, cell_scalars=None, title="mesh"):
    """Legacy ASCII VTK unstructured grid.

    ``point_vectors`` maps names to ``(n_vertices, 2)`` arrays (padded to 3D);
    ``cell_scalars`` maps names to ``(n_triangles,)`` arrays.
    """
    n, m = mesh.n_vertices, mesh.n_triangles
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {n} double"]
    out += [f"{x:.12g} {y:.12g} 0" for x, y in mesh.vertices]
    out.append(f"CELLS {m} {4 * m}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {m}")
    out += ["5"] * m
    if cell_scalars:
        out.append(f"CELL_DATA {m}")
        for name, vals in cell_scalars.items():
            vals = np.asarray(vals)
            kind = "int" if np.issubdtype(vals.dtype, np.integer) or vals.dtype == bool else "double"
            out += [f"SCALARS {name} {kind} 1", "LOOKUP_TABLE default"]
            out += [f"{int(v)}" if kind == "int" else f"{v:.12g}" for v in vals]
    if point_vectors:
        out.append(f"POINT_DATA {n}")
        for name, vals in point_vectors.items():
            out.append(f"VECTORS {name} double")
            out += [f"{a:.12g} {b:.12g} 0" for a, b in np.asarray(vals).reshape(n, 2)]
    Path(path).write_text("\n".join(out) + "\n")
