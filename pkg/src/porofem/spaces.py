"""Global dof numbering, Dirichlet constraint sets and nodal interpolation."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .elements import P1, P2, ReferenceElement, affine_map, quadrature_rule, shape_eval
from .mesh import BoundaryTag, Mesh


class SpaceKind(enum.Enum):
    SCALAR_P1 = "P1"
    SCALAR_P2 = "P2"
    VECTOR_P2 = "P2^2"


@dataclass(frozen=True, eq=False)
class DofMap:
    """Numbering of one Lagrange space on a mesh.

    Scalar nodes are numbered vertices first, then edge midpoints.  Vector
    dofs interleave components: dof ``2 * node + c``.
    """

    mesh: Mesh
    kind: SpaceKind
    node_coords: np.ndarray  # (num_nodes, 2)
    cell_nodes: np.ndarray  # (nt, 3 or 6)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def element(self) -> ReferenceElement:
        return P1 if self.kind is SpaceKind.SCALAR_P1 else P2

    @property
    def ncomp(self) -> int:
        return 2 if self.kind is SpaceKind.VECTOR_P2 else 1

    @property
    def num_nodes(self) -> int:
        return len(self.node_coords)

    @property
    def ndofs(self) -> int:
        return self.ncomp * self.num_nodes

    @property
    def cell_dofs(self) -> np.ndarray:
        """Local-to-global table; vector local order is (node0 x, node0 y, node1 x, ...)."""
        if self.ncomp == 1:
            return self.cell_nodes
        key = "cell_dofs"
        if key not in self._cache:
            cd = np.empty((len(self.cell_nodes), 2 * self.cell_nodes.shape[1]), dtype=np.int64)
            cd[:, 0::2] = 2 * self.cell_nodes
            cd[:, 1::2] = 2 * self.cell_nodes + 1
            self._cache[key] = cd
        return self._cache[key]

    def dof_coords(self) -> np.ndarray:
        return np.repeat(self.node_coords, self.ncomp, axis=0)

    def boundary_nodes(self, tags=None) -> np.ndarray:
        m = self.mesh
        sel = m.boundary_edges
        if tags is not None:
            sel = sel[np.isin(m.boundary_tags, [int(t) for t in tags])]
        nodes = m.edges[sel].ravel()
        if self.element is P2:
            nodes = np.concatenate([nodes, m.num_vertices + sel])
        return np.unique(nodes)


def build_dof_map(mesh: Mesh, kind: SpaceKind) -> DofMap:
    kind = SpaceKind(kind)
    if kind is SpaceKind.SCALAR_P1:
        coords = mesh.vertices
        cells = mesh.triangles
    else:
        mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
        coords = np.vstack([mesh.vertices, mids])
        cells = np.hstack([mesh.triangles, mesh.num_vertices + mesh.tri_edges])
    coords = np.ascontiguousarray(coords)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    coords.setflags(write=False)
    cells.setflags(write=False)
    return DofMap(mesh, kind, coords, cells)


@dataclass(frozen=True)
class CellQuadrature:
    """Physical quadrature data for every triangle.

    ``dx``: (nt, nq) weights including |det J|; ``x``: (nt, nq, 2) points;
    ``phi``: (nq, nloc) shape values; ``dphi``: (nt, nq, nloc, 2) physical
    gradients of the scalar basis.
    """

    dx: np.ndarray
    x: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray


def cell_quadrature(dm: DofMap, degree: int = 5) -> CellQuadrature:
    key = ("quad", degree)
    if key not in dm._cache:
        rule = quadrature_rule(degree)
        amap = affine_map(dm.mesh)
        phi, dref = shape_eval(dm.element, rule.points)
        dphi = np.einsum("kij,qnj->kqni", amap.inv_t, dref)
        dx = amap.det[:, None] * rule.weights[None, :]
        x = amap(rule.points)
        dm._cache[key] = CellQuadrature(dx, x, phi, dphi)
    return dm._cache[key]


def eval_scalar(dm: DofMap, coeffs, degree: int = 5):
    """Values and gradients, shapes (nt, nq) and (nt, nq, 2)."""
    q = cell_quadrature(dm, degree)
    local = np.asarray(coeffs)[dm.cell_nodes]
    return local @ q.phi.T, np.einsum("kn,kqni->kqi", local, q.dphi)


def eval_vector(dm: DofMap, coeffs, degree: int = 5):
    """Values (nt, nq, 2) and gradients (nt, nq, 2, 2) with grad[..., i, j] = d u_i / d x_j."""
    q = cell_quadrature(dm, degree)
    local = np.asarray(coeffs).reshape(-1, 2)[dm.cell_nodes]  # (nt, nloc, 2)
    vals = np.einsum("qn,kni->kqi", q.phi, local)
    grads = np.einsum("kni,kqnj->kqij", local, q.dphi)
    return vals, grads


def interpolate(dm: DofMap, fn: Callable, t: float = 0.0) -> np.ndarray:
    """Nodal interpolant of ``fn(x, t)``; ``x`` is an (npts, 2) array."""
    vals = np.asarray(fn(dm.node_coords, t), dtype=float)
    if dm.ncomp == 1:
        return np.broadcast_to(vals, (dm.num_nodes,)).copy()
    return np.broadcast_to(vals, (dm.num_nodes, 2)).reshape(-1).copy()


@dataclass(frozen=True)
class ConstraintSet:
    """Dofs with prescribed values ``value(x, t)`` sampled at node coordinates."""

    dofs: np.ndarray
    coords: np.ndarray
    value: Callable
    component: int | None = None

    def values(self, t: float) -> np.ndarray:
        v = np.asarray(self.value(self.coords, t), dtype=float)
        if v.ndim == 2:
            v = v[:, self.component]
        return np.broadcast_to(v, (len(self.dofs),)).copy()

    def __len__(self) -> int:
        return len(self.dofs)


def dirichlet_set(dm: DofMap, tags, component: int | None, value: Callable) -> ConstraintSet:
    """Constrain every node on the tagged edges, endpoints included.

    For vector spaces ``component`` selects x (0) or y (1); ``value`` may
    return either that component alone or the full vector.
    """
    tags = [BoundaryTag(t) for t in tags]
    nodes = dm.boundary_nodes(tags)
    if dm.ncomp == 1:
        dofs = nodes
        component = None
    else:
        if component not in (0, 1):
            raise ValueError("vector constraint needs component 0 or 1")
        dofs = 2 * nodes + component
    return ConstraintSet(dofs, dm.node_coords[nodes], value, component)


def merge_constraints(*sets: ConstraintSet):
    """Union of constraint sets as (dofs, callable(t) -> values); later sets win on overlap."""
    sets = [s for s in sets if s is not None and len(s)]
    if not sets:
        return np.zeros(0, dtype=np.int64), lambda t: np.zeros(0)
    all_dofs = np.concatenate([s.dofs for s in sets])
    dofs, first = np.unique(all_dofs[::-1], return_index=True)
    pick = len(all_dofs) - 1 - first

    def values(t):
        return np.concatenate([s.values(t) for s in sets])[pick]

    return dofs, values


@dataclass(frozen=True)
class RigidMotionBasis:
    fields: np.ndarray  # (3, ndofs): (1, 0), (0, 1), (-x2, x1)


def rigid_motion_basis(dm: DofMap) -> RigidMotionBasis:
    if dm.kind is not SpaceKind.VECTOR_P2:
        raise ValueError("rigid motions live in the vector space")
    x = dm.node_coords
    one, zero = np.ones(len(x)), np.zeros(len(x))
    fields = np.stack(
        [
            np.column_stack([one, zero]).ravel(),
            np.column_stack([zero, one]).ravel(),
            np.column_stack([-x[:, 1], x[:, 0]]).ravel(),
        ]
    )
    return RigidMotionBasis(fields)
