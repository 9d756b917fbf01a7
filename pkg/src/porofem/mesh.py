"""Uniform triangulations of axis-aligned rectangles with tagged boundary."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    pass


class BoundaryTag(enum.IntEnum):
    """Boundary parts of a rectangle [x0, x1] x [y0, y1]."""

    GAMMA1 = 1  # right,  x1 = max
    GAMMA2 = 2  # bottom, x2 = min
    GAMMA3 = 3  # left,   x1 = min
    GAMMA4 = 4  # top,    x2 = max


_NORMALS = {
    BoundaryTag.GAMMA1: (1.0, 0.0),
    BoundaryTag.GAMMA2: (0.0, -1.0),
    BoundaryTag.GAMMA3: (-1.0, 0.0),
    BoundaryTag.GAMMA4: (0.0, 1.0),
}


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangle mesh.

    ``edges`` rows are sorted vertex pairs; ``tri_edges[k, i]`` is the edge
    opposite local vertex ``i`` of triangle ``k``.  ``edge_tris`` holds the
    (one or two) adjacent triangles, ``-1`` marking a missing neighbour.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    edge_tris: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    domain: tuple = (0.0, 1.0, 0.0, 1.0)
    n: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def h(self) -> float:
        """Largest edge length."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return float(np.sqrt((d**2).sum(axis=1)).max())

    @property
    def h_label(self) -> float:
        """Nominal mesh size 1/n used to label convergence tables."""
        return (self.domain[1] - self.domain[0]) / self.n if self.n else self.h

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def boundary_vertices(self, tags=None) -> np.ndarray:
        sel = self.boundary_edges
        if tags is not None:
            mask = np.isin(self.boundary_tags, [int(t) for t in tags])
            sel = sel[mask]
        return np.unique(self.edges[sel].ravel())

    def vertex_tag(self, v: int) -> BoundaryTag | None:
        """Tag of a boundary vertex; corners get the lower-numbered tag."""
        hit = [t for e, t in zip(self.boundary_edges, self.boundary_tags) if v in self.edges[e]]
        return BoundaryTag(min(hit)) if hit else None


def _build_topology(triangles: np.ndarray):
    local = np.array([[1, 2], [2, 0], [0, 1]])
    all_edges = np.sort(triangles[:, local].reshape(-1, 2), axis=1)
    edges, inverse = np.unique(all_edges, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    tri_edges = inverse.reshape(-1, 3)
    edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
    counts = np.zeros(len(edges), dtype=np.int64)
    for flat, e in enumerate(inverse):
        edge_tris[e, counts[e]] = flat // 3
        counts[e] += 1
    if counts.max() > 2:
        raise MeshError("non-manifold edge")
    return edges, tri_edges, edge_tris, counts


def from_arrays(vertices, triangles, domain=None, n: int = 0, tag_boundary: bool = True) -> Mesh:
    """Build a mesh from raw arrays; boundary tags assume an axis-aligned rectangle.

    With ``tag_boundary=False`` any boundary shape is accepted and edges off
    the bounding rectangle keep tag 0 (no boundary data can be attached there).
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if domain is None:
        domain = (
            float(vertices[:, 0].min()),
            float(vertices[:, 0].max()),
            float(vertices[:, 1].min()),
            float(vertices[:, 1].max()),
        )
    edges, tri_edges, edge_tris, counts = _build_topology(triangles)
    bnd = np.flatnonzero(counts == 1)
    mid = 0.5 * (vertices[edges[bnd, 0]] + vertices[edges[bnd, 1]])
    x0, x1, y0, y1 = domain
    scale = max(x1 - x0, y1 - y0)
    tol = 1e-12 * scale
    tags = np.zeros(len(bnd), dtype=np.int64)
    tags[np.abs(mid[:, 0] - x1) < tol] = BoundaryTag.GAMMA1
    tags[np.abs(mid[:, 1] - y0) < tol] = BoundaryTag.GAMMA2
    tags[np.abs(mid[:, 0] - x0) < tol] = BoundaryTag.GAMMA3
    tags[np.abs(mid[:, 1] - y1) < tol] = BoundaryTag.GAMMA4
    if tag_boundary and (tags == 0).any():
        raise MeshError("boundary edge off the bounding rectangle")
    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        edges=edges,
        tri_edges=tri_edges,
        edge_tris=edge_tris,
        boundary_edges=bnd,
        boundary_tags=tags,
        domain=tuple(float(d) for d in domain),
        n=n,
    )
    if (mesh.signed_areas() <= 0).any():
        raise MeshError("triangle with non-positive signed area")
    for arr in (vertices, triangles, edges, tri_edges, edge_tris, bnd, tags):
        arr.setflags(write=False)
    return mesh


def build_uniform_mesh(n: int, domain=(0.0, 1.0, 0.0, 1.0)) -> Mesh:
    """Split an n x n grid of cells along the lower-left/upper-right diagonal."""
    if int(n) != n or n < 1:
        raise ValueError(f"mesh resolution must be a positive integer, got {n!r}")
    n = int(n)
    x0, x1, y0, y1 = domain
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate domain {domain!r}")
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)  # vertex id = j * (n + 1) + i
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return from_arrays(vertices, triangles, domain=domain, n=n)


def boundary_facets(mesh: Mesh):
    """List of ``(edge index, tag, outward unit normal)`` for each boundary edge."""
    return [
        (int(e), BoundaryTag(t), np.array(_NORMALS[BoundaryTag(t)]))
        for e, t in zip(mesh.boundary_edges, mesh.boundary_tags)
    ]


def facet_normals(mesh: Mesh) -> np.ndarray:
    return np.array([_NORMALS[BoundaryTag(t)] for t in mesh.boundary_tags])


def edge_lengths(mesh: Mesh, edges=None) -> np.ndarray:
    e = mesh.edges if edges is None else mesh.edges[edges]
    d = mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]]
    return np.sqrt((d**2).sum(axis=1))


def write_vtk(path, mesh: Mesh, point_data=None, title="porofem mesh") -> None:
    """Legacy VTK 3.0 ASCII unstructured grid of the P1 triangles.

    ``point_data`` maps names to arrays of shape (nv,) or (nv, 2).
    """
    nv, nt = mesh.num_vertices, mesh.num_triangles
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {nv} double")
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.vertices.tolist()]
    lines.append(f"CELLS {nt} {4 * nt}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if len(values) != nv:
                raise ValueError(f"point data {name!r} has {len(values)} entries, expected {nv}")
            if values.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines += [repr(v) for v in values.tolist()]
            else:
                lines.append(f"VECTORS {name} double")
                lines += [f"{a!r} {b!r} 0.0" for a, b in values[:, :2].tolist()]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
